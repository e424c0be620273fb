//! One-dimensional smoothing kernels.

use crate::registry::Registry;

/// A symmetric kernel integrating to one over `[-1, 1]`.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;

    fn eval(&self, x: f64) -> f64;

    /// `K(x / b) / b`.
    fn scaled(&self, x: f64, bandwidth: f64) -> f64 {
        self.eval(x / bandwidth) / bandwidth
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Epanechnikov;

impl Kernel for Epanechnikov {
    fn name(&self) -> &'static str {
        "epanechnikov"
    }

    fn eval(&self, x: f64) -> f64 {
        if x.abs() <= 1.0 {
            0.75 * (1.0 - x * x)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Biweight;

impl Kernel for Biweight {
    fn name(&self) -> &'static str {
        "biweight"
    }

    fn eval(&self, x: f64) -> f64 {
        if x.abs() <= 1.0 {
            let u = 1.0 - x * x;
            0.9375 * u * u
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Triangular;

impl Kernel for Triangular {
    fn name(&self) -> &'static str {
        "triangular"
    }

    fn eval(&self, x: f64) -> f64 {
        if x.abs() <= 1.0 {
            1.0 - x.abs()
        } else {
            0.0
        }
    }
}

/// Built-in kernels; `epanechnikov` is the default.
pub fn kernel_registry() -> Registry<dyn Kernel> {
    let mut reg: Registry<dyn Kernel> = Registry::new("kernel");
    reg.register("epanechnikov", || Box::new(Epanechnikov))
        .register("biweight", || Box::new(Biweight))
        .register("triangular", || Box::new(Triangular))
        .set_default("epanechnikov");
    reg
}

/// Largest integer offset with non-zero weight for a compact kernel of
/// support `[-1, 1]` at bandwidth `b`: the largest `r` with `r < b`.
pub fn support_radius(bandwidth: f64) -> usize {
    (bandwidth.ceil() as usize).saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epanechnikov_values() {
        let k = Epanechnikov;
        assert_eq!(k.eval(0.0), 0.75);
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.eval(-1.5), 0.0);
        assert_eq!(k.eval(0.5), 0.5625);
    }

    #[test]
    fn kernels_integrate_to_one() {
        // composite Simpson on [-1, 1]
        let n = 20_000;
        let h = 2.0 / n as f64;
        for name in kernel_registry().names() {
            let k = kernel_registry().create(name).unwrap();
            let mut sum = k.eval(-1.0) + k.eval(1.0);
            for i in 1..n {
                let x = -1.0 + i as f64 * h;
                sum += if i % 2 == 1 { 4.0 } else { 2.0 } * k.eval(x);
            }
            let integral = sum * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "{name}: {integral}");
        }
    }

    #[test]
    fn radius() {
        assert_eq!(support_radius(1.0), 0);
        assert_eq!(support_radius(2.0), 1);
        assert_eq!(support_radius(2.5), 2);
        assert_eq!(support_radius(7.0), 6);
    }
}
