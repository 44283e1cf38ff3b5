//! Forward-mode dual numbers with a dense gradient.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec<f64>,
}

impl Dual {
    pub fn constant(v: f64, n: usize) -> Dual {
        Dual { v, g: vec![0.0; n] }
    }

    pub fn variable(v: f64, k: usize, n: usize) -> Dual {
        let mut g = vec![0.0; n];
        g[k] = 1.0;
        Dual { v, g }
    }

    fn map(&self, v: f64, dv: f64) -> Dual {
        Dual {
            v,
            g: self.g.iter().map(|x| x * dv).collect(),
        }
    }

    pub fn exp(&self) -> Dual {
        let e = self.v.exp();
        self.map(e, e)
    }

    pub fn powf(&self, n: f64) -> Dual {
        self.map(self.v.powf(n), n * self.v.powf(n - 1.0))
    }

    pub fn scale(&self, c: f64) -> Dual {
        self.map(self.v * c, c)
    }

    pub fn offset(&self, c: f64) -> Dual {
        Dual {
            v: self.v + c,
            g: self.g.clone(),
        }
    }
}

impl Add for &Dual {
    type Output = Dual;
    fn add(self, o: &Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Dual {
    type Output = Dual;
    fn sub(self, o: &Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Dual {
    type Output = Dual;
    fn mul(self, o: &Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a * o.v + self.v * b).collect(),
        }
    }
}

impl Div for &Dual {
    type Output = Dual;
    fn div(self, o: &Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| (a * o.v - self.v * b) * inv * inv)
                .collect(),
        }
    }
}

impl Neg for &Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.scale(-1.0)
    }
}
