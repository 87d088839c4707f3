use super::{Mlp, NnError};

/// Norms below this are treated as zero: the similarity is then defined as 0.
pub const ZERO_NORM: f64 = 1e-12;

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
/// Returns 0 when either vector is (numerically) zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NnError> {
    Ok(cosine_with_grad(u, v)?.0)
}

/// Cosine similarity together with its gradient with respect to `u`.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if u.len() != v.len() {
        return Err(NnError::Shape {
            what: "cosine operands",
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok((0.0, vec![0.0; u.len()]));
    }
    let c = dot(u, v) / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| b / (nu * nv) - c * a / (nu * nu))
        .collect();
    Ok((c.clamp(-1.0, 1.0), grad))
}

/// Moves `target` toward `online`: `target <- m * target + (1 - m) * online`.
/// `m = 1` freezes the target exactly and `m = 0` copies `online` exactly.
pub fn ema_update(target: &mut Mlp, online: &Mlp, m: f64) -> Result<(), NnError> {
    if !(0.0..=1.0).contains(&m) {
        return Err(NnError::Momentum(m));
    }
    if !target.same_shape(online) {
        return Err(NnError::Shape {
            what: "ema operands",
            expected: target.num_params(),
            got: online.num_params(),
        });
    }
    if m == 0.0 {
        target.copy_from(online);
        return Ok(());
    }
    let w = 1.0 - m;
    for (t, &o) in target.params_mut().zip(online.params()) {
        let mixed = *t + w * (o - *t);
        *t = mixed.clamp(t.min(o), t.max(o));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::{array, Array1};

    fn scalar(p: f64) -> Mlp {
        Mlp::from_layers(vec![Layer::new(
            array![[p]],
            Array1::zeros(1),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.7071067811865475).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_is_neutral() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1e-13, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        let (_, g) = cosine_with_grad(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_length_mismatch() {
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let u = [0.3, -1.2, 0.8];
        let v = [1.1, 0.4, -0.5];
        let (_, g) = cosine_with_grad(&u, &v).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[i] += h;
            dn[i] -= h;
            let fd = (cosine_similarity(&up, &v).unwrap() - cosine_similarity(&dn, &v).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn ema_examples() {
        let mut t = scalar(1.0);
        ema_update(&mut t, &scalar(0.0), 0.95).unwrap();
        assert!((t.layers()[0].weight[[0, 0]] - 0.95).abs() < 1e-15);

        let mut t = scalar(0.123456789);
        ema_update(&mut t, &scalar(0.123456789), 0.95).unwrap();
        assert_eq!(t.layers()[0].weight[[0, 0]], 0.123456789);

        let mut t = scalar(3.0);
        ema_update(&mut t, &scalar(-1.0 / 3.0), 0.0).unwrap();
        assert_eq!(t.layers()[0].weight[[0, 0]], -1.0 / 3.0);

        let mut t = scalar(3.0);
        ema_update(&mut t, &scalar(-7.0), 1.0).unwrap();
        assert_eq!(t.layers()[0].weight[[0, 0]], 3.0);
    }

    #[test]
    fn ema_rejects_bad_momentum_and_shapes() {
        let mut t = scalar(1.0);
        assert!(matches!(
            ema_update(&mut t, &scalar(0.0), 1.5),
            Err(NnError::Momentum(_))
        ));
        assert!(ema_update(&mut t, &scalar(0.0), -0.1).is_err());
        let wide = Mlp::from_layers(vec![Layer::new(
            array![[1.0, 2.0]],
            array![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        assert!(ema_update(&mut t, &wide, 0.5).is_err());
    }
}
