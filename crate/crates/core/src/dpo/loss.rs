/// Loss value and its partial derivatives with respect to the four
/// log-probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_chosen: f64,
    pub d_chosen_ref: f64,
    pub d_rejected: f64,
    pub d_rejected_ref: f64,
}

/// `-ln σ(z)` without overflow.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `σ(-z)`.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn dpo_loss(lp_w: f64, lp_w_ref: f64, lp_l: f64, lp_l_ref: f64, beta: f64) -> f64 {
    let margin = (lp_w - lp_w_ref) - (lp_l - lp_l_ref);
    neg_log_sigmoid(beta * margin)
}

/// DPO with a hinge penalty on the chosen piece losing likelihood against
/// the reference.
pub fn dpop_loss(lp_w: f64, lp_w_ref: f64, lp_l: f64, lp_l_ref: f64, beta: f64, lambda: f64) -> f64 {
    dpop_loss_grad(lp_w, lp_w_ref, lp_l, lp_l_ref, beta, lambda).loss
}

/// At `lp_w == lp_w_ref` the hinge is treated as inactive, so the gradient
/// there equals the plain DPO gradient.
pub fn dpop_loss_grad(lp_w: f64, lp_w_ref: f64, lp_l: f64, lp_l_ref: f64, beta: f64, lambda: f64) -> LossGrad {
    let margin = (lp_w - lp_w_ref) - (lp_l - lp_l_ref);
    let drop = lp_w_ref - lp_w;
    let active = drop > 0.0;
    let z = beta * margin - beta * lambda * drop.max(0.0);
    let s = -sigmoid_neg(z);
    let hinge = if active { beta * lambda } else { 0.0 };
    LossGrad {
        loss: neg_log_sigmoid(z),
        d_chosen: s * (beta + hinge),
        d_chosen_ref: s * (-beta - hinge),
        d_rejected: s * -beta,
        d_rejected_ref: s * beta,
    }
}
