//! 256-bit floating point for reference values.

use astro_float::{BigFloat, Consts, RoundingMode};

pub const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    cc: Consts,
}

impl Default for Hp {
    fn default() -> Self {
        Hp { cc: Consts::new().expect("constants cache") }
    }
}

impl Hp {
    pub fn num(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, P, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, P, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, P, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, P, RM)
    }

    pub fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(P, RM, &mut self.cc)
    }

    pub fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(P, RM, &mut self.cc)
    }

    pub fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(P, RM)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(P, RM)
    }

    pub fn to_f64(&self, a: &BigFloat) -> f64 {
        let s = format!("{a}");
        s.parse().unwrap_or_else(|_| panic!("cannot parse {s}"))
    }
}
