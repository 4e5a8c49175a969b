//! Rectified Adam optimizer.
//!
//! Adam's adaptive step is unreliable while the second-moment estimate has
//! seen too few samples. RAdam tracks the approximate sample size `rho_t`
//! and falls back to a plain momentum update (`lr * m_hat`, no denominator)
//! until `rho_t` exceeds 4; afterwards the adaptive step is multiplied by a
//! variance rectification factor `r_t`.

use std::io::{Read, Write};

use crate::checkpoint::{read_u16, read_u32, read_u64, write_u16, write_u32, write_u64};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const OPT_MAGIC: &[u8; 4] = b"OPT1";

/// RAdam over a fixed list of named parameters.
///
/// Moment buffers live in the optimizer; parameters are updated in place.
/// All scalar bookkeeping (`rho_t`, bias corrections, rectification) runs in
/// f64 and is cast to the parameter dtype once per step.
pub struct RAdam<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<E: Element> RAdam<E> {
    /// Optimizer with the usual defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(entries: Vec<(String, Tensor<E>)>, lr: f64) -> Result<RAdam<E>> {
        RAdam::with_hyperparams(entries, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        entries: Vec<(String, Tensor<E>)>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<RAdam<E>> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::argument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::argument(format!(
                "betas must lie in [0, 1), got beta1={beta1} beta2={beta2}"
            )));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::argument(format!("eps must be positive, got {eps}")));
        }
        let m = entries.iter().map(|(_, p)| vec![E::ZERO; p.numel()]).collect();
        let v = entries.iter().map(|(_, p)| vec![E::ZERO; p.numel()]).collect();
        Ok(RAdam {
            entries,
            m,
            v,
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// The named parameters this optimizer updates.
    pub fn params(&self) -> &[(String, Tensor<E>)] {
        &self.entries
    }

    /// Clears the gradient slot of every parameter.
    pub fn zero_grads(&self) {
        for (_, p) in &self.entries {
            p.zero_grad();
        }
    }

    /// Applies one update from the current gradients.
    ///
    /// Every parameter must carry a gradient (run `backward` first). The
    /// update order matches the reference formulation: moments first, then
    /// `m_hat = m / (1 - beta1^t)`, then either `lr * m_hat` (plain branch,
    /// `rho_t <= 4`) or `(lr * r_t) * m_hat / (sqrt(v / (1 - beta2^t)) + eps)`.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let beta2_t = self.beta2.powi(t as i32);
        let rho_t = rho_inf - 2.0 * (t as f64) * beta2_t / (1.0 - beta2_t);
        let rectified = rho_t > 4.0;
        let rate = if rectified {
            let r_t = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt();
            self.lr * r_t
        } else {
            self.lr
        };

        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_minus_b1 = E::from_f64(1.0 - self.beta1);
        let one_minus_b2 = E::from_f64(1.0 - self.beta2);
        let bc1_e = E::from_f64(bc1);
        let bc2_e = E::from_f64(bc2);
        let eps_e = E::from_f64(self.eps);
        let rate_e = E::from_f64(rate);

        for (i, (name, tensor)) in self.entries.iter().enumerate() {
            let grad = tensor.grad().ok_or_else(|| {
                Error::Graph(format!("parameter {name} has no gradient to step with"))
            })?;
            if grad.len() != tensor.numel() {
                return Err(Error::shape(format!(
                    "parameter {name} has {} elements but a gradient of {}",
                    tensor.numel(),
                    grad.len()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            tensor.with_data_mut(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + one_minus_b1 * g;
                    v[j] = b2 * v[j] + one_minus_b2 * g * g;
                    let m_hat = m[j] / bc1_e;
                    let upd = if rectified {
                        (rate_e * m_hat) / ((v[j] / bc2_e).sqrt() + eps_e)
                    } else {
                        rate_e * m_hat
                    };
                    data[j] = data[j] - upd;
                }
            });
        }
        Ok(())
    }

    /// Serializes step count, hyperparameters, and moment buffers.
    /// Moments are stored as f64 bits so the round trip is exact.
    pub fn write_state<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(OPT_MAGIC)?;
        write_u64(w, self.t)?;
        write_u64(w, self.lr.to_bits())?;
        write_u64(w, self.beta1.to_bits())?;
        write_u64(w, self.beta2.to_bits())?;
        write_u64(w, self.eps.to_bits())?;
        write_u32(w, self.entries.len() as u32)?;
        for (i, (name, _)) in self.entries.iter().enumerate() {
            write_u16(w, name.len() as u16)?;
            w.write_all(name.as_bytes())?;
            write_u32(w, self.m[i].len() as u32)?;
            for &x in &self.m[i] {
                write_u64(w, x.to_f64().to_bits())?;
            }
            for &x in &self.v[i] {
                write_u64(w, x.to_f64().to_bits())?;
            }
        }
        Ok(())
    }

    /// Restores state written by [`write_state`](Self::write_state). The
    /// parameter list must match the one the state was saved from.
    pub fn read_state<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated stream before optimizer magic".into()))?;
        if &magic != OPT_MAGIC {
            return Err(Error::Format(format!(
                "bad optimizer magic {magic:?}, expected {OPT_MAGIC:?}"
            )));
        }
        let t = read_u64(r)?;
        let lr = f64::from_bits(read_u64(r)?);
        let beta1 = f64::from_bits(read_u64(r)?);
        let beta2 = f64::from_bits(read_u64(r)?);
        let eps = f64::from_bits(read_u64(r)?);
        let count = read_u32(r)? as usize;
        if count != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state holds {count} parameters, this model has {}",
                self.entries.len()
            )));
        }
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for (name, tensor) in &self.entries {
            let len = read_u16(r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Format("truncated stream inside a parameter name".into()))?;
            let stored = String::from_utf8(bytes)
                .map_err(|_| Error::Format("parameter name is not valid UTF-8".into()))?;
            if &stored != name {
                return Err(Error::Checkpoint(format!(
                    "optimizer state names parameter {stored}, expected {name}"
                )));
            }
            let numel = read_u32(r)? as usize;
            if numel != tensor.numel() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state for {name} has {numel} elements, expected {}",
                    tensor.numel()
                )));
            }
            let mut slot_m = Vec::with_capacity(numel);
            for _ in 0..numel {
                slot_m.push(E::from_f64(f64::from_bits(read_u64(r)?)));
            }
            let mut slot_v = Vec::with_capacity(numel);
            for _ in 0..numel {
                slot_v.push(E::from_f64(f64::from_bits(read_u64(r)?)));
            }
            m.push(slot_m);
            v.push(slot_v);
        }
        self.t = t;
        self.lr = lr;
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64, n: usize) -> Tensor<f64> {
        Tensor::full(&[n], value).unwrap().trainable()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let p = single_param(0.7, 3);
        let zeros: Tensor<f64> = Tensor::zeros(&[3]).unwrap();
        let mut opt = RAdam::new(vec![("p".into(), p.clone())], 0.001).unwrap();
        for expected_t in 1..=6u64 {
            opt.zero_grads();
            p.mul(&zeros).unwrap().sum_all().unwrap().backward().unwrap();
            opt.step().unwrap();
            assert_eq!(opt.t(), expected_t);
            assert_eq!(p.to_vec(), vec![0.7; 3]);
        }
    }

    #[test]
    fn trajectory_matches_rectified_adam_reference() {
        // Constant unit gradient from theta = 0, lr 1e-3, default betas.
        // The plain branch runs for t = 1..4 and gives theta_t = -lr * t;
        // rectification starts at t = 5 (rho_5 = 4.9959... > 4).
        let expected = [
            -0.001,
            -0.002,
            -0.003,
            -0.004,
            -0.0040173115029932,
            -0.004043132615536848,
        ];
        let p = single_param(0.0, 2);
        let mut opt = RAdam::new(vec![("p".into(), p.clone())], 0.001).unwrap();
        let mut trajectory = Vec::new();
        for step in 0..6 {
            opt.zero_grads();
            p.sum_all().unwrap().backward().unwrap();
            opt.step().unwrap();
            let data = p.to_vec();
            assert_eq!(data[0], data[1]);
            trajectory.push(data[0]);
            assert!(
                (data[0] - expected[step]).abs() < 1e-10,
                "step {}: got {}, expected {}",
                step + 1,
                data[0],
                expected[step]
            );
        }
        // The first plain-branch update is exactly lr * m_hat with m_hat = 1.
        assert_eq!(trajectory[0], -0.001);
        // The branch switch shrinks the step by the rectification factor.
        let plain = (trajectory[3] - trajectory[2]).abs();
        let rect = (trajectory[4] - trajectory[3]).abs();
        assert!(rect < 0.1 * plain, "plain {plain} vs rectified {rect}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let p = single_param(0.0, 2);
        let mut opt = RAdam::new(vec![("p".into(), p)], 0.001).unwrap();
        assert!(matches!(opt.step(), Err(Error::Graph(_))));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let entries = vec![("p".into(), single_param(0.0, 1))];
        assert!(RAdam::new(entries.clone(), 0.0).is_err());
        assert!(RAdam::with_hyperparams(entries.clone(), 0.001, 1.0, 0.999, 1e-8).is_err());
        assert!(RAdam::with_hyperparams(entries, 0.001, 0.9, 0.999, 0.0).is_err());
    }

    fn drive(p: &Tensor<f64>, opt: &mut RAdam<f64>, steps: std::ops::Range<u64>) {
        for step in steps {
            let scale: Tensor<f64> =
                Tensor::full(&[2], 0.3 + 0.1 * step as f64).unwrap();
            opt.zero_grads();
            p.mul(&scale).unwrap().sum_all().unwrap().backward().unwrap();
            opt.step().unwrap();
        }
    }

    #[test]
    fn state_round_trip_resumes_bitwise() {
        let straight = single_param(0.5, 2);
        let mut opt_a = RAdam::new(vec![("p".into(), straight.clone())], 0.01).unwrap();
        drive(&straight, &mut opt_a, 0..8);

        let resumed = single_param(0.5, 2);
        let mut opt_b = RAdam::new(vec![("p".into(), resumed.clone())], 0.01).unwrap();
        drive(&resumed, &mut opt_b, 0..4);
        let mut bytes = Vec::new();
        opt_b.write_state(&mut bytes).unwrap();

        let mut opt_c = RAdam::new(vec![("p".into(), resumed.clone())], 999.0).unwrap();
        opt_c.read_state(&mut bytes.as_slice()).unwrap();
        assert_eq!(opt_c.t(), 4);
        assert_eq!(opt_c.lr(), 0.01);
        drive(&resumed, &mut opt_c, 4..8);

        assert_eq!(straight.to_vec(), resumed.to_vec());
    }

    #[test]
    fn state_refuses_mismatched_parameters() {
        let p = single_param(0.0, 2);
        let opt = RAdam::new(vec![("p".into(), p)], 0.001).unwrap();
        let mut bytes = Vec::new();
        opt.write_state(&mut bytes).unwrap();

        let other = single_param(0.0, 3);
        let mut target = RAdam::new(vec![("p".into(), other)], 0.001).unwrap();
        assert!(matches!(
            target.read_state(&mut bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));

        let renamed = single_param(0.0, 2);
        let mut target = RAdam::new(vec![("q".into(), renamed)], 0.001).unwrap();
        assert!(matches!(
            target.read_state(&mut bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
