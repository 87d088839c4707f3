//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code; networks are copied out into
//! plain nested vectors and evaluated with scalar loops.
#![allow(dead_code)]

use imrl::nn::{Activation, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    /// `w[l][o][i]`
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub act: Vec<Activation>,
}

pub struct Grad {
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
        Activation::Identity => z,
    }
}

fn dact(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => 1.0 - z.tanh().powi(2),
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Identity => 1.0,
    }
}

impl Net {
    pub fn from_mlp(m: &Mlp) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        let mut a = Vec::new();
        for l in m.layers() {
            w.push(l.weight.rows().into_iter().map(|r| r.to_vec()).collect());
            b.push(l.bias.to_vec());
            a.push(l.activation);
        }
        Self { w, b, act: a }
    }

    /// Pre-activations and activations per layer (index 0 of `acts` is the input).
    fn run(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::new();
        for l in 0..self.w.len() {
            let input = acts.last().unwrap();
            let z: Vec<f64> = self.w[l]
                .iter()
                .zip(&self.b[l])
                .map(|(row, bias)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias)
                .collect();
            acts.push(z.iter().map(|&v| act(self.act[l], v)).collect());
            pre.push(z);
        }
        (pre, acts)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.run(x).1.pop().unwrap()
    }

    pub fn zero_grad(&self) -> Grad {
        Grad {
            w: self
                .w
                .iter()
                .map(|l| l.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            b: self.b.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    /// Accumulates the gradient of `<up, net(x)>` into `g`; returns d/dx.
    pub fn backward_into(&self, x: &[f64], up: &[f64], g: &mut Grad) -> Vec<f64> {
        let (pre, acts) = self.run(x);
        let mut delta = up.to_vec();
        for l in (0..self.w.len()).rev() {
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= dact(self.act[l], pre[l][o]);
            }
            for o in 0..delta.len() {
                g.b[l][o] += delta[o];
                for i in 0..acts[l].len() {
                    g.w[l][o][i] += delta[o] * acts[l][i];
                }
            }
            let mut next = vec![0.0; acts[l].len()];
            for (o, d) in delta.iter().enumerate() {
                for (i, n) in next.iter_mut().enumerate() {
                    *n += d * self.w[l][o][i];
                }
            }
            delta = next;
        }
        delta
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.w.len() {
            for r in &self.w[l] {
                out.extend(r);
            }
            out.extend(&self.b[l]);
        }
        out
    }

    /// One Adam step from zero moments (step 1).
    pub fn adam_first_step(&mut self, g: &Grad, lr: f64) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let upd = |p: &mut f64, g: f64| {
            let m_hat = (1.0 - b1) * g / (1.0 - b1);
            let v_hat = (1.0 - b2) * g * g / (1.0 - b2);
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..self.w.len() {
            for o in 0..self.w[l].len() {
                for i in 0..self.w[l][o].len() {
                    upd(&mut self.w[l][o][i], g.w[l][o][i]);
                }
                upd(&mut self.b[l][o], g.b[l][o]);
            }
        }
    }

    pub fn ema_towards(&mut self, online: &Net, m: f64) {
        for l in 0..self.w.len() {
            for o in 0..self.w[l].len() {
                for i in 0..self.w[l][o].len() {
                    self.w[l][o][i] = m * self.w[l][o][i] + (1.0 - m) * online.w[l][o][i];
                }
                self.b[l][o] = m * self.b[l][o] + (1.0 - m) * online.b[l][o];
            }
        }
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// d cos(u, v) / du
pub fn cosine_grad(u: &[f64], v: &[f64]) -> Vec<f64> {
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let c = cosine(u, v);
    u.iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - c * a / (nu * nu))
        .collect()
}

/// How the critic consumes the action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticShape {
    /// `Q(s, a) = net([s | a])[0]`
    StateAction,
    /// `Q(s, a) = net(s)[a]` with `a` one-hot.
    ActionHead,
}

pub struct Pair {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_n: Vec<f64>,
    pub a_n: Vec<f64>,
}

pub struct ImOracle {
    pub f_c: Net,
    pub f_d: Net,
    pub din: Net,
    pub critic: Net,
    pub loss: f64,
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn critic_q(net: &Net, shape: CriticShape, s: &[f64], a: &[f64]) -> f64 {
    match shape {
        CriticShape::StateAction => net.forward(&cat(s, a))[0],
        CriticShape::ActionHead => net.forward(s).iter().zip(a).map(|(q, h)| q * h).sum(),
    }
}

fn critic_back(net: &Net, shape: CriticShape, s: &[f64], a: &[f64], up: f64, g: &mut Grad) {
    match shape {
        CriticShape::StateAction => {
            net.backward_into(&cat(s, a), &[up], g);
        }
        CriticShape::ActionHead => {
            let ups: Vec<f64> = a.iter().map(|h| h * up).collect();
            net.backward_into(s, &ups, g);
        }
    }
}

/// One propagation update written out step by step:
///
/// ```text
/// q = f_c(s, a); q_n = f_d(s_n, a_n)            (no gradient into q_n)
/// v[i] = cos(q[head i], q_n[head i])
/// d = din(v)
/// loss = mean (Q(s, a) + d - Q(s_n, a_n))^2
/// Adam(f_c), Adam(din), Adam(critic, lambda * grad, critic lr); f_d <- m f_d + (1 - m) f_c
/// ```
#[allow(clippy::too_many_arguments)]
pub fn im_update_oracle(
    f_c: &Net,
    f_d: &Net,
    din: &Net,
    critic: &Net,
    shape: CriticShape,
    pairs: &[Pair],
    k: usize,
    feature_dim: usize,
    lambda: f64,
    detach_target_critic: bool,
    lr: f64,
    critic_lr: f64,
    momentum: f64,
) -> ImOracle {
    let n = pairs.len() as f64;
    let mut g_fc = f_c.zero_grad();
    let mut g_din = din.zero_grad();
    let mut g_q = critic.zero_grad();
    let mut loss = 0.0;
    for p in pairs {
        let x = cat(&p.s, &p.a);
        let q = f_c.forward(&x);
        let q_n = f_d.forward(&cat(&p.s_n, &p.a_n));
        let v: Vec<f64> = (0..k)
            .map(|i| {
                let r = i * feature_dim..(i + 1) * feature_dim;
                cosine(&q[r.clone()], &q_n[r])
            })
            .collect();
        let d = din.forward(&v)[0];
        let qa = critic_q(critic, shape, &p.s, &p.a);
        let qb = critic_q(critic, shape, &p.s_n, &p.a_n);
        let e = qa + d - qb;
        loss += e * e / n;
        let de = 2.0 * e / n;

        let dv = din.backward_into(&v, &[de], &mut g_din);
        let mut dq = vec![0.0; q.len()];
        for i in 0..k {
            let r = i * feature_dim..(i + 1) * feature_dim;
            let gc = cosine_grad(&q[r.clone()], &q_n[r.clone()]);
            for (j, gj) in r.zip(gc) {
                dq[j] = dv[i] * gj;
            }
        }
        f_c.backward_into(&x, &dq, &mut g_fc);
        critic_back(critic, shape, &p.s, &p.a, lambda * de, &mut g_q);
        if !detach_target_critic {
            critic_back(critic, shape, &p.s_n, &p.a_n, -lambda * de, &mut g_q);
        }
    }
    let mut f_c2 = f_c.clone();
    f_c2.adam_first_step(&g_fc, lr);
    let mut din2 = din.clone();
    din2.adam_first_step(&g_din, lr);
    let mut critic2 = critic.clone();
    critic2.adam_first_step(&g_q, critic_lr);
    let mut f_d2 = f_d.clone();
    f_d2.ema_towards(&f_c2, momentum);
    ImOracle {
        f_c: f_c2,
        f_d: f_d2,
        din: din2,
        critic: critic2,
        loss,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central finite-difference check of `net`'s parameter and input gradients
/// for the scalar loss `<up, net(x)>`. Each partial passes when its relative
/// error is at most 1e-4 or its absolute error at most 1e-6; the return value
/// is the worst `min(rel / 1e-4, abs / 1e-6)`, so anything <= 1 passes.
pub fn finite_difference_error(net: &Mlp, x: &[f64], up: &[f64], h: f64) -> f64 {
    let loss = |m: &Mlp, x: &[f64]| -> f64 {
        m.forward(x)
            .unwrap()
            .iter()
            .zip(up)
            .map(|(a, b)| a * b)
            .sum()
    };
    let (g, dx) = net.backward(x, up).unwrap();
    let mut worst: f64 = 0.0;
    let mut check = |fd: f64, an: f64| {
        let err = (fd - an).abs();
        let rel = err / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((rel / 1e-4).min(err / 1e-6));
    };
    for (li, layer) in net.layers().iter().enumerate() {
        let (rows, cols) = layer.weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut up_net = net.clone();
                up_net.layers_mut()[li].weight[[r, c]] += h;
                let mut dn_net = net.clone();
                dn_net.layers_mut()[li].weight[[r, c]] -= h;
                check(
                    (loss(&up_net, x) - loss(&dn_net, x)) / (2.0 * h),
                    g.layers[li].0[[r, c]],
                );
            }
            let mut up_net = net.clone();
            up_net.layers_mut()[li].bias[r] += h;
            let mut dn_net = net.clone();
            dn_net.layers_mut()[li].bias[r] -= h;
            check(
                (loss(&up_net, x) - loss(&dn_net, x)) / (2.0 * h),
                g.layers[li].1[r],
            );
        }
    }
    for i in 0..x.len() {
        let mut xu = x.to_vec();
        xu[i] += h;
        let mut xd = x.to_vec();
        xd[i] -= h;
        check((loss(net, &xu) - loss(net, &xd)) / (2.0 * h), dx[i]);
    }
    worst
}

pub mod fixtures {
    use super::*;
    use imrl::agents::{Critic, CriticKind};
    use imrl::envs::{Action, ActionSpace};
    use imrl::imagination::{Imagination, ImaginationConfig};
    use imrl::nn::AdamConfig;
    use imrl::replay::{Batch, Transition};
    use imrl::rng::{stream, Stream};

    pub struct Outcome {
        pub loss_error: f64,
        pub param_error: f64,
        pub f_d_error: f64,
    }

    fn transition(s: Vec<f64>, action: Action, episode: u64) -> Transition {
        Transition {
            next_obs: s.iter().map(|x| x * 0.5).collect(),
            obs: s,
            action,
            reward: 0.0,
            done: false,
            truncated: false,
            episode,
        }
    }

    /// Runs one library propagation update on a fixed tiny configuration and
    /// compares it with [`im_update_oracle`].
    pub fn transcription(shape: CriticShape, lambda: f64, detach: bool, seed: u64) -> Outcome {
        let (k, fd, obs_dim, lr, m) = (2, 3, 3, 0.01, 0.9);
        let (space, act_dim) = match shape {
            CriticShape::StateAction => (ActionSpace::Box { dim: 1, high: 2.0 }, 1),
            CriticShape::ActionHead => (ActionSpace::Discrete(2), 2),
        };
        let mut rng = stream(seed, Stream::ImaginationInit);
        let f_c = Mlp::new(&[obs_dim + act_dim, 5, k * fd], Activation::Tanh, &mut rng).unwrap();
        let din = Mlp::new(&[k, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let (critic_sizes, kind) = match shape {
            CriticShape::StateAction => (vec![obs_dim + act_dim, 6, 1], CriticKind::StateAction),
            CriticShape::ActionHead => (vec![obs_dim, 6, 2], CriticKind::ActionHead),
        };
        let critic_net = Mlp::new(&critic_sizes, Activation::Tanh, &mut rng).unwrap();
        let mut critic = Critic::new(critic_net.clone(), kind, obs_dim, AdamConfig::with_lr(1e-3));

        let action = |i: usize| match shape {
            CriticShape::StateAction => Action::Continuous(vec![(i as f64 * 1.3).sin() * 1.8]),
            CriticShape::ActionHead => Action::Discrete(i % 2),
        };
        let state = |i: usize| {
            (0..obs_dim)
                .map(|j| ((i * 7 + j * 3) as f64 * 0.61).cos())
                .collect::<Vec<_>>()
        };
        let anchors: Vec<Transition> = (0..3).map(|i| transition(state(i), action(i), 0)).collect();
        let partners: Vec<Transition> =
            (3..6).map(|i| transition(state(i), action(i), 1)).collect();

        let cfg = ImaginationConfig {
            enabled: true,
            k,
            feature_dim: fd,
            momentum: m,
            loss_weight: lambda,
            detach_target_critic: detach,
            lr: Some(lr),
            ..ImaginationConfig::default()
        };
        let mut im = Imagination::from_parts(
            cfg,
            obs_dim,
            space,
            f_c.clone(),
            vec![din.clone()],
            &[&critic],
            1e-3,
            3,
        )
        .unwrap();
        // Move f_d off f_c so the EMA line and the stop-gradient are both exercised.
        for x in im.f_d.params_mut() {
            *x *= 0.8;
        }
        let f_d = im.f_d.clone();

        let encode = |a: &Action| {
            let mut v = Vec::new();
            space.encode_into(a, &mut v);
            v
        };
        let pairs: Vec<Pair> = anchors
            .iter()
            .zip(&partners)
            .map(|(x, y)| Pair {
                s: x.obs.clone(),
                a: encode(&x.action),
                s_n: y.obs.clone(),
                a_n: encode(&y.action),
            })
            .collect();
        let expected = im_update_oracle(
            &Net::from_mlp(&f_c),
            &Net::from_mlp(&f_d),
            &Net::from_mlp(&din),
            &Net::from_mlp(&critic_net),
            shape,
            &pairs,
            k,
            fd,
            lambda,
            detach,
            lr,
            1e-3,
            m,
        );

        let step = im
            .update_critic(
                0,
                &mut critic,
                &Batch::from_transitions(&anchors, obs_dim, space),
                &Batch::from_transitions(&partners, obs_dim, space),
            )
            .unwrap();
        let params = |n: &Mlp| Net::from_mlp(n).params();
        let param_error = [
            max_abs_diff(&params(&im.f_c), &expected.f_c.params()),
            max_abs_diff(&params(&im.heads[0].din), &expected.din.params()),
            max_abs_diff(&params(&critic.net), &expected.critic.params()),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        Outcome {
            loss_error: (step.loss - expected.loss).abs(),
            param_error,
            f_d_error: max_abs_diff(&params(&im.f_d), &expected.f_d.params()),
        }
    }
}
