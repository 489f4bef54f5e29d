//! Reverse-mode differentiation and a central-difference checker.

mod scalar;
mod tape;

pub use scalar::{product, softmax, sum, Scalar};
pub use tape::{Tape, Var};

/// Value and gradient of an objective at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Evaluates `objective` at `point` on a fresh tape and back-propagates.
pub fn grad<F>(objective: F, point: &[f64]) -> Gradient
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(point);
    let y = objective(&xs);
    Gradient {
        value: y.value(),
        gradient: y.gradient(&xs),
    }
}

/// Finite-difference step policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdStep {
    Absolute(f64),
    /// `h_i = rel · |x_i|` (falls back to `rel` when `x_i == 0`).
    Relative(f64),
}

impl FdStep {
    fn at(self, x: f64) -> f64 {
        match self {
            FdStep::Absolute(h) => h,
            FdStep::Relative(r) if x != 0.0 => r * x.abs(),
            FdStep::Relative(r) => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdCoordinate {
    pub index: usize,
    pub step: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Some branch decision (max/min/threshold) flips within one step of the
    /// point, so the central difference straddles a kink.
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub value: f64,
    pub coordinates: Vec<FdCoordinate>,
}

impl FdReport {
    /// Largest relative error over coordinates that were not excluded.
    pub fn max_rel_error(&self) -> f64 {
        self.coordinates
            .iter()
            .filter(|c| !c.excluded)
            .map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    /// Central-difference rounding error bound for a coordinate: `8 eps |f| / h`.
    pub fn noise_bound(&self, c: &FdCoordinate) -> f64 {
        8.0 * f64::EPSILON * self.value.abs() / c.step
    }

    /// Largest relative error over coordinates that were not excluded and
    /// whose disagreement exceeds [`FdReport::noise_bound`].
    pub fn max_rel_error_above_noise(&self) -> f64 {
        self.coordinates
            .iter()
            .filter(|c| !c.excluded && (c.analytic - c.numeric).abs() > self.noise_bound(c))
            .map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    /// Non-excluded coordinates that agree to within rounding noise but not
    /// in relative terms (typically gradients that are zero up to rounding).
    pub fn noise_level_count(&self) -> usize {
        self.coordinates
            .iter()
            .filter(|c| !c.excluded && (c.analytic - c.numeric).abs() <= self.noise_bound(c) && c.rel_error >= 1e-4)
            .count()
    }

    pub fn excluded_count(&self) -> usize {
        self.coordinates.iter().filter(|c| c.excluded).count()
    }
}

fn evaluate<F>(objective: &F, point: &[f64]) -> (f64, Vec<bool>)
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(point);
    let y = objective(&xs);
    (y.value(), tape.branch_signature())
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares reverse-mode gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
pub fn fd_check<F>(objective: F, point: &[f64], step: FdStep) -> FdReport
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(point);
    let y = objective(&xs);
    let analytic = y.gradient(&xs);
    let signature = tape.branch_signature();

    let mut coordinates = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for (i, &x) in point.iter().enumerate() {
        let h = step.at(x);
        assert!(h > 0.0, "finite-difference step must be positive");
        probe[i] = x + h;
        let (fp, sp) = evaluate(&objective, &probe);
        probe[i] = x - h;
        let (fm, sm) = evaluate(&objective, &probe);
        probe[i] = x;
        let numeric = (fp - fm) / (2.0 * h);
        coordinates.push(FdCoordinate {
            index: i,
            step: h,
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric),
            excluded: sp != signature || sm != signature,
        });
    }
    FdReport {
        value: y.value(),
        coordinates,
    }
}
