use serde::{Deserialize, Serialize};

/// Coefficients of `sigma^2(v) = a*exp(b*v) + c*exp(d*v)`, `v` in km/h and
/// `sigma^2` in (km/h)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl VarianceCoefficients {
    /// Fitted passive wheel speed sensor model from road data.
    pub const PASSIVE_WSS: VarianceCoefficients = VarianceCoefficients {
        a: 0.3095,
        b: -0.1241,
        c: 0.1477,
        d: -0.0009149,
    };

    pub fn eval(&self, v_kmh: f64) -> f64 {
        self.a * (self.b * v_kmh).exp() + self.c * (self.d * v_kmh).exp()
    }

    /// `d sigma^2 / dv`.
    pub fn slope(&self, v_kmh: f64) -> f64 {
        self.a * self.b * (self.b * v_kmh).exp() + self.c * self.d * (self.d * v_kmh).exp()
    }

    /// Term order with the faster decay first (`|b| >= |d|`).
    pub fn canonical(self) -> Self {
        if self.b.abs() >= self.d.abs() {
            self
        } else {
            self.swapped()
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            a: self.c,
            b: self.d,
            c: self.a,
            d: self.b,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn from_array([a, b, c, d]: [f64; 4]) -> Self {
        Self { a, b, c, d }
    }
}

/// A fitted variance model with 95% half-widths per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    #[serde(flatten)]
    pub coefficients: VarianceCoefficients,
    /// Two standard errors per coefficient, same field names as above.
    pub ci_halfwidth: VarianceCoefficients,
    pub fit_rmse: f64,
    pub bins_used: usize,
}

impl VarianceModel {
    pub fn eval(&self, v_kmh: f64) -> f64 {
        self.coefficients.eval(v_kmh)
    }

    /// Whether `truth` lies inside every coefficient's interval.
    pub fn covers(&self, truth: &VarianceCoefficients) -> [bool; 4] {
        let est = self.coefficients.as_array();
        let hw = self.ci_halfwidth.as_array();
        let t = truth.as_array();
        std::array::from_fn(|i| (t[i] - est[i]).abs() <= hw[i])
    }
}

pub fn eval_variance(model: &VarianceModel, v_kmh: f64) -> f64 {
    model.eval(v_kmh)
}
