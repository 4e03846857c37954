//! Forward and backward passes of one frozen dense layer with its PEFT delta.
//!
//! Inputs are `in × batch`, outputs `out × batch`. Low-rank methods add their
//! delta in parallel with the frozen product; the adapter is applied
//! sequentially on the frozen layer's output with a residual connection.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::peft::{LayerParams, PeftState};

/// Intermediate values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    x: Matrix,
    kind: CacheKind,
}

#[derive(Debug, Clone)]
enum CacheKind {
    Plain,
    Lora { u: Matrix, rank: usize },
    LoHa { p1: Matrix, p2: Matrix, delta_w: Matrix },
    AdaLora { u: Matrix, v: Matrix },
    Adapter { h: Matrix, pre: Matrix, act: Matrix },
    Compacter { delta_w: Matrix },
}

fn frozen_affine(weight: &Matrix, bias: &[f64], x: &Matrix) -> Result<Matrix> {
    let mut h = weight.matmul(x)?;
    h.add_column_broadcast(bias)?;
    Ok(h)
}

/// Dense `Σ_i A_i ⊗ (s_i t_i)`.
pub(crate) fn compacter_weight(shared: &[Matrix], s: &[Matrix], t: &[Matrix]) -> Result<Matrix> {
    let mut acc: Option<Matrix> = None;
    for ((a, si), ti) in shared.iter().zip(s).zip(t) {
        let term = a.kronecker(&si.matmul(ti)?)?;
        match acc.as_mut() {
            Some(m) => m.add_assign(&term)?,
            None => acc = Some(term),
        }
    }
    acc.ok_or_else(|| Error::param("compacter needs n >= 1"))
}

/// Runs the layer; `rank` truncates DyLoRA factors.
pub fn layer_forward(
    state: &PeftState,
    index: usize,
    weight: &Matrix,
    bias: &[f64],
    x: &Matrix,
    rank: Option<usize>,
) -> Result<(Matrix, LayerCache)> {
    state.method().check_rank(rank)?;
    let params = state
        .layers()
        .get(index)
        .ok_or_else(|| Error::param(format!("layer {index} out of range")))?;
    let (z, kind) = match params {
        LayerParams::Full { weight: dw, bias: db } => {
            let mut z = frozen_affine(weight, bias, x)?;
            z.add_assign(&dw.matmul(x)?)?;
            z.add_column_broadcast(db)?;
            (z, CacheKind::Plain)
        }
        LayerParams::BitFit { bias: trainable } => (frozen_affine(weight, trainable, x)?, CacheKind::Plain),
        LayerParams::Lora { b, a } => {
            let k = rank.unwrap_or(b.cols());
            let (bt, at) = (b.leading_cols(k), a.leading_rows(k));
            let u = at.matmul(x)?;
            let mut z = frozen_affine(weight, bias, x)?;
            z.add_assign(&bt.matmul(&u)?)?;
            (z, CacheKind::Lora { u, rank: k })
        }
        LayerParams::LoHa { b1, a1, b2, a2 } => {
            let p1 = b1.matmul(a1)?;
            let p2 = b2.matmul(a2)?;
            let delta_w = p1.hadamard(&p2)?;
            let mut z = frozen_affine(weight, bias, x)?;
            z.add_assign(&delta_w.matmul(x)?)?;
            (z, CacheKind::LoHa { p1, p2, delta_w })
        }
        LayerParams::AdaLora { b, lambda, a, .. } => {
            let u = a.matmul(x)?;
            let mut v = u.clone();
            for (k, &l) in lambda.iter().enumerate() {
                for j in 0..v.cols() {
                    v.set(k, j, v.get(k, j) * l);
                }
            }
            let mut z = frozen_affine(weight, bias, x)?;
            z.add_assign(&b.matmul(&v)?)?;
            (z, CacheKind::AdaLora { u, v })
        }
        LayerParams::Adapter {
            down,
            down_bias,
            up,
            up_bias,
        } => {
            let h = frozen_affine(weight, bias, x)?;
            let mut pre = down.matmul(&h)?;
            pre.add_column_broadcast(down_bias)?;
            let act = pre.map(|v| v.max(0.0));
            let mut z = up.matmul(&act)?;
            z.add_column_broadcast(up_bias)?;
            z.add_assign(&h)?;
            (z, CacheKind::Adapter { h, pre, act })
        }
        LayerParams::Compacter { s, t, bias: cb } => {
            let delta_w = compacter_weight(state.shared(), s, t)?;
            let mut z = frozen_affine(weight, bias, x)?;
            z.add_assign(&delta_w.matmul(x)?)?;
            z.add_column_broadcast(cb)?;
            (z, CacheKind::Compacter { delta_w })
        }
    };
    Ok((z, LayerCache { x: x.clone(), kind }))
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    dst.add_assign(src).expect("gradient shapes match parameters");
}

fn add_vec(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Accumulates the layer's parameter gradients into `grads` (same layout as
/// `state`) and returns the gradient with respect to the layer input.
/// `upstream` is dL/dz for the layer output `z`.
pub fn layer_backward(
    state: &PeftState,
    index: usize,
    weight: &Matrix,
    cache: &LayerCache,
    upstream: &Matrix,
    grads: &mut PeftState,
) -> Result<Matrix> {
    let x = &cache.x;
    let g = upstream;
    let params = &state.layers()[index];
    let shared_grads_needed = matches!(params, LayerParams::Compacter { .. });
    let mut shared_grad: Vec<Matrix> = Vec::new();

    let dx = match (params, &cache.kind, &mut grads.layers_mut()[index]) {
        (LayerParams::Full { weight: dw, .. }, _, LayerParams::Full { weight: gw, bias: gb }) => {
            add_into(gw, &g.matmul_t(x)?);
            add_vec(gb, &g.row_sums());
            weight.add(dw)?.t_matmul(g)?
        }
        (LayerParams::BitFit { .. }, _, LayerParams::BitFit { bias: gb }) => {
            add_vec(gb, &g.row_sums());
            weight.t_matmul(g)?
        }
        (LayerParams::Lora { b, a }, CacheKind::Lora { u, rank }, LayerParams::Lora { b: gb, a: ga }) => {
            let k = *rank;
            let (bt, at) = (b.leading_cols(k), a.leading_rows(k));
            let d_bt = g.matmul_t(u)?;
            let du = bt.t_matmul(g)?;
            let d_at = du.matmul_t(x)?;
            for r in 0..gb.rows() {
                for c in 0..k {
                    gb.set(r, c, gb.get(r, c) + d_bt.get(r, c));
                }
            }
            for r in 0..k {
                for c in 0..ga.cols() {
                    ga.set(r, c, ga.get(r, c) + d_at.get(r, c));
                }
            }
            let mut dx = weight.t_matmul(g)?;
            dx.add_assign(&at.t_matmul(&du)?)?;
            dx
        }
        (
            LayerParams::LoHa { b1, a1, b2, a2 },
            CacheKind::LoHa { p1, p2, delta_w },
            LayerParams::LoHa {
                b1: gb1,
                a1: ga1,
                b2: gb2,
                a2: ga2,
            },
        ) => {
            let dm = g.matmul_t(x)?;
            let dp1 = dm.hadamard(p2)?;
            let dp2 = dm.hadamard(p1)?;
            add_into(gb1, &dp1.matmul_t(a1)?);
            add_into(ga1, &b1.t_matmul(&dp1)?);
            add_into(gb2, &dp2.matmul_t(a2)?);
            add_into(ga2, &b2.t_matmul(&dp2)?);
            weight.add(delta_w)?.t_matmul(g)?
        }
        (
            LayerParams::AdaLora { b, lambda, a, active },
            CacheKind::AdaLora { u, v },
            LayerParams::AdaLora {
                b: gb,
                lambda: gl,
                a: ga,
                ..
            },
        ) => {
            let d_b = g.matmul_t(v)?;
            let dv = b.t_matmul(g)?;
            let mut du = dv.clone();
            for k in 0..lambda.len() {
                if active[k] {
                    gl[k] += crate::numerics::dot(dv.row(k), u.row(k));
                }
                for j in 0..du.cols() {
                    du.set(k, j, du.get(k, j) * lambda[k]);
                }
            }
            let d_a = du.matmul_t(x)?;
            for r in 0..gb.rows() {
                for k in 0..lambda.len() {
                    if active[k] {
                        gb.set(r, k, gb.get(r, k) + d_b.get(r, k));
                    }
                }
            }
            for k in 0..lambda.len() {
                if active[k] {
                    for c in 0..ga.cols() {
                        ga.set(k, c, ga.get(k, c) + d_a.get(k, c));
                    }
                }
            }
            let mut dx = weight.t_matmul(g)?;
            dx.add_assign(&a.t_matmul(&du)?)?;
            dx
        }
        (
            LayerParams::Adapter { down, up, .. },
            CacheKind::Adapter { h, pre, act },
            LayerParams::Adapter {
                down: g_down,
                down_bias: g_down_bias,
                up: g_up,
                up_bias: g_up_bias,
            },
        ) => {
            add_into(g_up, &g.matmul_t(act)?);
            add_vec(g_up_bias, &g.row_sums());
            let d_act = up.t_matmul(g)?;
            let mut d_pre = d_act;
            for (d, &p) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            add_into(g_down, &d_pre.matmul_t(h)?);
            add_vec(g_down_bias, &d_pre.row_sums());
            let mut dh = g.clone();
            dh.add_assign(&down.t_matmul(&d_pre)?)?;
            weight.t_matmul(&dh)?
        }
        (
            LayerParams::Compacter { s, t, .. },
            CacheKind::Compacter { delta_w },
            LayerParams::Compacter {
                s: gs,
                t: gt,
                bias: g_bias,
            },
        ) => {
            let shared = state.shared();
            let n = shared.len();
            let dw = g.matmul_t(x)?;
            let (p, q) = (dw.rows() / n, dw.cols() / n);
            shared_grad = vec![Matrix::zeros(n, n); n];
            for i in 0..n {
                let bi = s[i].matmul(&t[i])?;
                let mut d_bi = Matrix::zeros(p, q);
                for br in 0..n {
                    for bc in 0..n {
                        let coef = shared[i].get(br, bc);
                        let mut inner = 0.0;
                        for u in 0..p {
                            for w in 0..q {
                                let d = dw.get(br * p + u, bc * q + w);
                                inner += d * bi.get(u, w);
                                d_bi.set(u, w, d_bi.get(u, w) + coef * d);
                            }
                        }
                        shared_grad[i].set(br, bc, inner);
                    }
                }
                add_into(&mut gs[i], &d_bi.matmul_t(&t[i])?);
                add_into(&mut gt[i], &s[i].t_matmul(&d_bi)?);
            }
            add_vec(g_bias, &g.row_sums());
            weight.add(delta_w)?.t_matmul(g)?
        }
        _ => return Err(Error::param("gradient buffer does not match the state layout")),
    };

    if shared_grads_needed {
        for (dst, src) in grads.shared_mut().iter_mut().zip(&shared_grad) {
            add_into(dst, src);
        }
    }
    Ok(dx)
}
