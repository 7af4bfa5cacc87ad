//! Euclidean projections onto the feasible sets used for weight vectors.

/// Projection onto `{µ ≥ 0, Σ w_k µ_k ≤ cap}` for positive weights `w`.
///
/// Sort-based waterfilling: the solution is `max(v_k - θ w_k, 0)` with the
/// threshold `θ ≥ 0` found from the sorted breakpoints `v_k / w_k`.
pub fn project_weighted_simplex(v: &[f64], w: &[f64], cap: f64) -> Vec<f64> {
    debug_assert_eq!(v.len(), w.len());
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let load: f64 = clipped.iter().zip(w).map(|(x, wk)| x * wk).sum();
    if load <= cap {
        return clipped;
    }
    let mut order: Vec<usize> = (0..v.len()).filter(|&k| v[k] > 0.0).collect();
    order.sort_by(|&a, &b| (v[b] / w[b]).total_cmp(&(v[a] / w[a])));
    let mut wv = 0.0;
    let mut ww = 0.0;
    let mut theta = 0.0;
    for (pos, &k) in order.iter().enumerate() {
        wv += w[k] * v[k];
        ww += w[k] * w[k];
        let t = (wv - cap) / ww;
        let next_break = order.get(pos + 1).map(|&n| v[n] / w[n]);
        // t is valid once every remaining breakpoint sits below it
        if next_break.is_none_or(|b| b <= t) {
            theta = t;
            break;
        }
    }
    let theta = theta.max(0.0);
    let mut out: Vec<f64> = v.iter().zip(w).map(|(x, wk)| (x - theta * wk).max(0.0)).collect();
    // rounding in θ can leave the load a few ulps of max|v| above a tiny cap
    let load: f64 = out.iter().zip(w).map(|(x, wk)| x * wk).sum();
    if load > cap {
        let s = cap / load;
        out.iter_mut().for_each(|x| *x *= s);
    }
    out
}

/// Projection onto `{µ ≥ 0, Σµ_k ≤ cap}`.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    let ones = vec![1.0; v.len()];
    project_weighted_simplex(v, &ones, cap)
}

/// Projection onto `{µ ≥ 0, ‖µ‖₂ ≤ cap}`: clip, then shrink radially.
pub fn project_orthant_ball(v: &[f64], cap: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > cap {
        let s = cap / norm;
        out.iter_mut().for_each(|x| *x *= s);
    }
    out
}
