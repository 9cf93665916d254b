//! The multi-directional separation penalty `λ · min_d |β − d|` and the
//! one-dimensional problems it induces inside the ADMM loop.
//!
//! Every covariate `k` shrinks toward the direction set `{0, γ_k^{(1)}, …}`.
//! Three solvers live here:
//!
//! * [`prox_mdsp`]: the scalar proximal map, solved by trying the
//!   soft-threshold candidate of every direction;
//! * [`update_gamma`]: the penalty-only search for group effects given `ν`,
//!   exhaustive over the observed values;
//! * [`update_column`]: the exact joint minimizer of the `(ν_{·k}, γ_k)`
//!   block, where `ν` is profiled out and each group effect is located by a
//!   sweep over the breakpoints of a sum of truncated Huber functions.

use std::cmp::Ordering;

use crate::data::{GammaUpdate, SignConstraint};
use crate::scalar::Scalar;

/// Inner `(ν, γ)` sweeps per ADMM iteration.
pub const MAX_INNER_SWEEPS: usize = 10;
/// Relative objective change that ends the inner sweeps early.
pub const INNER_REL_TOL: f64 = 1e-10;

/// `sign(z) · max(|z| − t, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Candidate shrink targets of one covariate: always `0` plus the non-zero
/// group effects, duplicates removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet<T> {
    targets: Vec<T>,
}

impl<T: Scalar> DirectionSet<T> {
    pub fn new(gammas: &[T]) -> Self {
        let mut targets = Vec::with_capacity(gammas.len() + 1);
        targets.push(T::zero());
        for &g in gammas {
            if !targets.contains(&g) {
                targets.push(g);
            }
        }
        Self { targets }
    }

    /// Directions in insertion order; `targets()[0]` is always `0`.
    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    /// `min_d |v − d|`.
    #[inline]
    pub fn distance(&self, v: T) -> T {
        self.targets
            .iter()
            .fold(T::infinity(), |acc, &d| acc.min((v - d).abs()))
    }

    /// Index of the direction `v` sits on exactly, if any.
    pub fn hit(&self, v: T) -> Option<usize> {
        self.targets.iter().position(|&d| d == v)
    }

    /// Nearest direction to `v`; ties go to the earlier direction.
    pub fn nearest(&self, v: T) -> usize {
        let mut best = 0;
        for (l, &d) in self.targets.iter().enumerate() {
            if (v - d).abs() < (v - self.targets[best]).abs() {
                best = l;
            }
        }
        best
    }
}

/// `λ · min_d |β − d|`.
#[inline]
pub fn mdsp_value<T: Scalar>(beta: T, directions: &DirectionSet<T>, lambda: T) -> T {
    lambda * directions.distance(beta)
}

/// Objective minimized by [`prox_mdsp`].
#[inline]
pub fn prox_objective<T: Scalar>(v: T, u: T, directions: &DirectionSet<T>, lambda: T, kappa: T) -> T {
    let h = T::lit(0.5);
    h * kappa * (v - u) * (v - u) + mdsp_value(v, directions, lambda)
}

/// `argmin_ν (κ/2)(ν − u)² + λ min_d |ν − d|`.
///
/// For each direction `d` the candidate `d + S(u − d, λ/κ)` minimizes the
/// piece of the objective that uses `d`; the overall minimizer is the best of
/// these. Ties go to the smaller `|ν|`, then to the zero direction.
pub fn prox_mdsp<T: Scalar>(u: T, directions: &DirectionSet<T>, lambda: T, kappa: T) -> T {
    if lambda == T::zero() {
        return u;
    }
    let t = lambda / kappa;
    let mut best = T::nan();
    let mut best_val = T::infinity();
    for &d in &directions.targets {
        let cand = d + soft_threshold(u - d, t);
        let val = prox_objective(cand, u, directions, lambda, kappa);
        if val < best_val || (val == best_val && cand.abs() < best.abs()) {
            best = cand;
            best_val = val;
        }
    }
    best
}

/// Result of the penalty-only group-effect search.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSearch<T> {
    pub gamma: Vec<T>,
    /// Some group found no admissible candidate and kept its value.
    pub empty_candidates: bool,
    /// `λ Σ_i min_d |ν_i − d|` at the returned effects.
    pub objective: T,
}

/// Penalty-only update of the group effects of one covariate:
/// `argmin_γ Σ_i min_d |ν_i − d|`, searched exhaustively over the distinct
/// non-zero values of `ν` (sign-filtered). With more than one group the
/// effects are updated cyclically. Ties go to the candidate nearest the
/// current value; a group with no candidate keeps its value, unless a
/// fallback grid of `grid_resolution` points improves on it.
pub fn update_gamma<T: Scalar>(
    nu: &[T],
    current: &[T],
    lambda: T,
    constraints: &[SignConstraint],
    grid_resolution: usize,
) -> GammaSearch<T> {
    let objective_at = |g: &[T]| -> T {
        let dirs = DirectionSet::new(g);
        nu.iter().map(|&v| dirs.distance(v)).sum::<T>()
    };
    let mut gamma = current.to_vec();
    let mut candidates: Vec<T> = nu.iter().copied().filter(|&v| v != T::zero()).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    candidates.dedup();
    let max_abs = nu.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));

    let mut empty = false;
    let mut obj = objective_at(&gamma);
    let sweeps = if gamma.len() > 1 { MAX_INNER_SWEEPS } else { 1 };
    for _ in 0..sweeps {
        let before = obj;
        for l in 0..gamma.len() {
            let sign = constraints.get(l).copied().unwrap_or_default();
            let admissible: Vec<T> = candidates.iter().copied().filter(|&c| sign.admits(c)).collect();
            let pool = if admissible.is_empty() {
                empty = true;
                if sign == SignConstraint::Free || grid_resolution == 0 || max_abs == T::zero() {
                    continue;
                }
                let step = max_abs / T::from_usize(grid_resolution).unwrap();
                let s = if sign == SignConstraint::Positive { T::one() } else { -T::one() };
                (1..=grid_resolution)
                    .map(|j| s * step * T::from_usize(j).unwrap())
                    .collect()
            } else {
                admissible
            };
            let cur = gamma[l];
            let mut best = (objective_at(&gamma), cur);
            for &c in &pool {
                gamma[l] = c;
                let v = objective_at(&gamma);
                let closer = (c - cur).abs() < (best.1 - cur).abs();
                if v < best.0 || (v == best.0 && closer) {
                    best = (v, c);
                }
            }
            gamma[l] = best.1;
            obj = best.0;
        }
        if before - obj <= T::lit(INNER_REL_TOL) * before.abs().max(T::min_positive_value()) {
            break;
        }
    }
    GammaSearch {
        objective: lambda * obj,
        gamma,
        empty_candidates: empty,
    }
}

/// Moreau envelope of `λ|·|` with parameter `1/κ`:
/// `κt²/2` for `|t| ≤ λ/κ`, `λ|t| − λ²/(2κ)` beyond.
#[inline]
fn huber<T: Scalar>(t: T, lambda: T, kappa: T) -> T {
    let c = lambda / kappa;
    let a = t.abs();
    if a <= c {
        T::lit(0.5) * kappa * t * t
    } else {
        lambda * a - T::lit(0.5) * lambda * c
    }
}

/// `Σ_i min_ν [(κ/2)(ν − u_i)² + λ min_d |ν − d|]`: the `(ν, γ)` block
/// objective with `ν` minimized out.
pub fn profile_objective<T: Scalar>(u: &[T], directions: &DirectionSet<T>, lambda: T, kappa: T) -> T {
    u.iter()
        .map(|&ui| {
            directions
                .targets
                .iter()
                .fold(T::infinity(), |acc, &d| acc.min(huber(ui - d, lambda, kappa)))
        })
        .sum()
}

/// Block objective `Σ_i (κ/2)(ν_i − u_i)² + λ min_d |ν_i − d|`.
pub fn column_objective<T: Scalar>(nu: &[T], u: &[T], directions: &DirectionSet<T>, lambda: T, kappa: T) -> T {
    nu.iter()
        .zip(u)
        .map(|(&v, &ui)| prox_objective(v, ui, directions, lambda, kappa))
        .sum()
}

/// Quadratic `aγ² + bγ + c`.
#[derive(Debug, Clone, Copy, Default)]
struct Quad<T> {
    a: T,
    b: T,
    c: T,
}

impl<T: Scalar> Quad<T> {
    #[inline]
    fn add(&mut self, o: Quad<T>, sign: T) {
        self.a += sign * o.a;
        self.b += sign * o.b;
        self.c += sign * o.c;
    }

    #[inline]
    fn eval(&self, g: T) -> T {
        (self.a * g + self.b) * g + self.c
    }

    /// Minimizer over `[lo, hi]` (finite bounds).
    fn argmin(&self, lo: T, hi: T) -> T {
        if self.a > T::zero() {
            (-self.b / (self.a + self.a)).max(lo).min(hi)
        } else if self.b > T::zero() {
            lo
        } else {
            hi
        }
    }
}

/// Exact minimizer over `γ` of `F(γ) = Σ_i min(cap_i, H(u_i − γ))`, `H` the
/// Huber envelope, restricted to the sign region. The current value is
/// always among the candidates, so `F` never increases. Ties go to the
/// candidate closest to `current`.
fn best_center<T: Scalar>(
    u: &[T],
    caps: &[T],
    lambda: T,
    kappa: T,
    sign: SignConstraint,
    current: T,
) -> T {
    let half = T::lit(0.5);
    let c = lambda / kappa;
    let (lo_bound, hi_bound) = match sign {
        SignConstraint::Free => (T::neg_infinity(), T::infinity()),
        SignConstraint::Positive => (T::zero(), T::infinity()),
        SignConstraint::Negative => (T::neg_infinity(), T::zero()),
    };
    let exact = |g: T| -> T {
        u.iter()
            .zip(caps)
            .map(|(&ui, &ai)| ai.min(huber(ui - g, lambda, kappa)))
            .sum()
    };

    let mut events: Vec<(T, Quad<T>)> = Vec::with_capacity(4 * u.len());
    let mut base = Quad::default();
    for (&ui, &ai) in u.iter().zip(caps) {
        if !(ai > T::zero()) {
            continue;
        }
        let konst = Quad { a: T::zero(), b: T::zero(), c: ai };
        base.add(konst, T::one());
        let quad = Quad {
            a: half * kappa,
            b: -kappa * ui,
            c: half * kappa * ui * ui,
        };
        let reach = if ai <= half * kappa * c * c {
            (ai * T::lit(2.0) / kappa).sqrt()
        } else {
            (ai + half * lambda * c) / lambda
        };
        let mut push = |x: T, from: Quad<T>, to: Quad<T>| {
            let mut d = to;
            d.add(from, -T::one());
            events.push((x, d));
        };
        if reach > c {
            let left = Quad { a: T::zero(), b: -lambda, c: lambda * ui - half * lambda * c };
            let right = Quad { a: T::zero(), b: lambda, c: -lambda * ui - half * lambda * c };
            push(ui - reach, konst, left);
            push(ui - c, left, quad);
            push(ui + c, quad, right);
            push(ui + reach, right, konst);
        } else {
            push(ui - reach, konst, quad);
            push(ui + reach, quad, konst);
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    let admissible = |g: T| g >= lo_bound && g <= hi_bound;
    let mut candidates: Vec<(T, T)> = Vec::new();
    if admissible(current) {
        candidates.push((exact(current), current));
    }
    let total_cap: T = base.c;
    candidates.push((total_cap, T::zero()));

    let mut acc = base;
    let mut j = 0;
    while j < events.len() {
        let x = events[j].0;
        while j < events.len() && events[j].0 == x {
            acc.add(events[j].1, T::one());
            j += 1;
        }
        if j == events.len() {
            break;
        }
        let lo = x.max(lo_bound);
        let hi = events[j].0.min(hi_bound);
        if lo > hi {
            continue;
        }
        let g = acc.argmin(lo, hi);
        candidates.push((acc.eval(g), g));
    }

    let approx_min = candidates
        .iter()
        .fold(T::infinity(), |m, &(v, _)| m.min(v));
    let slack = T::lit(1e-9) * (approx_min.abs() + total_cap.abs() + T::one());
    let mut best: Option<(T, T)> = None;
    for &(v, g) in &candidates {
        if v > approx_min + slack {
            continue;
        }
        let ev = exact(g);
        best = match best {
            None => Some((ev, g)),
            Some((bv, bg)) => {
                let tie = (ev - bv).abs() <= T::epsilon() * T::lit(16.0) * (bv.abs() + T::one());
                if (ev < bv && !tie) || (tie && (g - current).abs() < (bg - current).abs()) {
                    Some((ev, g))
                } else {
                    Some((bv, bg))
                }
            }
        };
    }
    best.map_or(current, |(_, g)| g)
}

/// Exact minimizer of the `(ν_{·k}, γ_k)` block
/// `Σ_i (κ/2)(ν_i − u_i)² + λ min_{d ∈ {0, γ}} |ν_i − d|`
/// with `u_i = β_ik + Λ_ik/κ`. Group effects are updated cyclically, each by
/// an exact one-dimensional search of the profile objective; `ν` is then the
/// prox at the final effects. Returns `ν`; `gamma` is updated in place.
pub fn update_column<T: Scalar>(
    u: &[T],
    gamma: &mut [T],
    lambda: T,
    kappa: T,
    constraints: &[SignConstraint],
    mode: GammaUpdate,
    grid_resolution: usize,
) -> Vec<T> {
    if lambda == T::zero() {
        return u.to_vec();
    }
    match mode {
        GammaUpdate::Profile => {
            let mut caps = vec![T::zero(); u.len()];
            let mut obj = profile_objective(u, &DirectionSet::new(gamma), lambda, kappa);
            let sweeps = if gamma.len() > 1 { MAX_INNER_SWEEPS } else { 1 };
            for _ in 0..sweeps {
                let before = obj;
                for l in 0..gamma.len() {
                    let others: Vec<T> = gamma
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != l)
                        .map(|(_, &g)| g)
                        .collect();
                    let dirs = DirectionSet::new(&others);
                    for (cap, &ui) in caps.iter_mut().zip(u) {
                        *cap = dirs
                            .targets
                            .iter()
                            .fold(T::infinity(), |acc, &d| acc.min(huber(ui - d, lambda, kappa)));
                    }
                    let sign = constraints.get(l).copied().unwrap_or_default();
                    gamma[l] = best_center(u, &caps, lambda, kappa, sign, gamma[l]);
                }
                obj = profile_objective(u, &DirectionSet::new(gamma), lambda, kappa);
                if before - obj <= T::lit(INNER_REL_TOL) * before.abs().max(T::min_positive_value()) {
                    break;
                }
            }
            let dirs = DirectionSet::new(gamma);
            u.iter().map(|&ui| prox_mdsp(ui, &dirs, lambda, kappa)).collect()
        }
        GammaUpdate::Alternating => {
            let mut dirs = DirectionSet::new(gamma);
            let mut nu: Vec<T> = u.iter().map(|&ui| prox_mdsp(ui, &dirs, lambda, kappa)).collect();
            let mut obj = column_objective(&nu, u, &dirs, lambda, kappa);
            for _ in 0..MAX_INNER_SWEEPS {
                let search = update_gamma(&nu, gamma, lambda, constraints, grid_resolution);
                gamma.copy_from_slice(&search.gamma);
                dirs = DirectionSet::new(gamma);
                nu = u.iter().map(|&ui| prox_mdsp(ui, &dirs, lambda, kappa)).collect();
                let next = column_objective(&nu, u, &dirs, lambda, kappa);
                let done = obj - next <= T::lit(INNER_REL_TOL) * obj.abs().max(T::min_positive_value());
                obj = next;
                if done {
                    break;
                }
            }
            nu
        }
    }
}
