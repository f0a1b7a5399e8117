use super::{Action, ActionBox};
use crate::scalar::{bracket, interp_clamped, Real};

/// Feedback table on a (time, state) grid: piecewise constant in time (the
/// action chosen at `t_i` holds on `[t_i, t_{i+1})`), linear in the state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable<T> {
    times: Vec<T>,
    xs: Vec<T>,
    dim: usize,
    /// `[time][x][coord]`, flattened.
    values: Vec<T>,
}

impl<T: Real> FeedbackTable<T> {
    /// `rows[i][j]` is the action at `(times[i], xs[j])`.
    pub fn new(times: Vec<T>, xs: Vec<T>, rows: &[Vec<Action<T>>]) -> Self {
        assert_eq!(rows.len(), times.len(), "one row per time node");
        assert!(!xs.is_empty());
        let dim = rows[0][0].dim();
        let mut values = Vec::with_capacity(times.len() * xs.len() * dim);
        for row in rows {
            assert_eq!(row.len(), xs.len(), "one action per state node");
            for a in row {
                values.extend_from_slice(a.as_slice());
            }
        }
        Self { times, xs, dim, values }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn at_node(&self, i: usize, j: usize) -> Action<T> {
        let base = (i * self.xs.len() + j) * self.dim;
        Action::from_slice(&self.values[base..base + self.dim])
    }

    fn time_index(&self, t: T) -> usize {
        let eps = T::lit(1e-9) * (T::one() + t.abs());
        let upper = self.times.partition_point(|&v| v <= t + eps);
        upper.saturating_sub(1).min(self.times.len() - 1)
    }

    pub fn evaluate(&self, t: T, x: T) -> Action<T> {
        let i = self.time_index(t);
        let nx = self.xs.len();
        if nx == 1 || x <= self.xs[0] {
            return self.at_node(i, 0);
        }
        if x >= self.xs[nx - 1] {
            return self.at_node(i, nx - 1);
        }
        let j = bracket(&self.xs, x);
        let w = (x - self.xs[j]) / (self.xs[j + 1] - self.xs[j]);
        let (a, b) = (self.at_node(i, j), self.at_node(i, j + 1));
        a.map(|k, v| v + w * (b.get(k) - v))
    }

    /// The single action if every entry is identical.
    pub fn as_constant(&self) -> Option<Action<T>> {
        let first = &self.values[..self.dim];
        self.values
            .chunks(self.dim)
            .all(|c| c == first)
            .then(|| Action::from_slice(first))
    }
}

/// Closed-form feedback rules.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticPolicy<T> {
    /// `a = gain(t)·x + offset(t)`, both linear in `t` between nodes.
    LinearFeedback {
        times: Vec<T>,
        gain: Vec<T>,
        offset: Vec<T>,
    },
    /// CRRA investment/consumption rule built from the coefficient `a(t)`:
    /// investment `β/η·x` and consumption `a(t)^{-1/η}·x`. With
    /// `consumption_only` the single action is the consumption fraction
    /// `a(t)^{-1/η}`.
    Crra {
        times: Vec<T>,
        coefficient: Vec<T>,
        eta: T,
        beta: T,
        consumption_only: bool,
    },
}

impl<T: Real> AnalyticPolicy<T> {
    fn evaluate(&self, t: T, x: T) -> Action<T> {
        match self {
            Self::LinearFeedback { times, gain, offset } => {
                Action::scalar(interp_clamped(times, gain, t) * x + interp_clamped(times, offset, t))
            }
            Self::Crra {
                times,
                coefficient,
                eta,
                beta,
                consumption_only,
            } => {
                let a = interp_clamped(times, coefficient, t);
                let frac = a.powf(-T::one() / *eta);
                if *consumption_only {
                    Action::scalar(frac)
                } else {
                    Action::pair(*beta / *eta * x, frac * x)
                }
            }
        }
    }
}

/// An admissible Markov feedback control `ν(t, x)`. Every evaluation is
/// clamped into the action box.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy<T> {
    Constant(Action<T>),
    Feedback(FeedbackTable<T>),
    Analytic(AnalyticPolicy<T>),
    /// `window` on `[from, until)`, `base` elsewhere: the spike deviation
    /// `window ⊗_{until} base` started at `from`.
    Spliced {
        window: Box<Policy<T>>,
        base: Box<Policy<T>>,
        from: T,
        until: T,
    },
    /// `base + delta`, then clamped.
    Shifted {
        base: Box<Policy<T>>,
        delta: Action<T>,
    },
}

impl<T: Real> Policy<T> {
    pub fn evaluate(&self, t: T, x: T, actions: &ActionBox<T>) -> Action<T> {
        actions.clamp(self.raw(t, x, actions))
    }

    fn raw(&self, t: T, x: T, actions: &ActionBox<T>) -> Action<T> {
        match self {
            Policy::Constant(a) => *a,
            Policy::Feedback(table) => table.evaluate(t, x),
            Policy::Analytic(p) => p.evaluate(t, x),
            Policy::Spliced {
                window,
                base,
                from,
                until,
            } => {
                if t >= *from && t < *until {
                    window.evaluate(t, x, actions)
                } else {
                    base.evaluate(t, x, actions)
                }
            }
            Policy::Shifted { base, delta } => {
                let a = base.evaluate(t, x, actions);
                a.map(|j, v| v + delta.get(j))
            }
        }
    }

    pub fn spliced(window: Policy<T>, base: Policy<T>, from: T, until: T) -> Self {
        Policy::Spliced {
            window: Box::new(window),
            base: Box::new(base),
            from,
            until,
        }
    }

    pub fn shifted(base: Policy<T>, delta: Action<T>) -> Self {
        Policy::Shifted {
            base: Box::new(base),
            delta,
        }
    }

    /// Short provenance label used in reports and ensembles.
    pub fn label(&self) -> String {
        match self {
            Policy::Constant(a) => format!("constant{:?}", a.as_slice()),
            Policy::Feedback(_) => "feedback-table".to_string(),
            Policy::Analytic(AnalyticPolicy::LinearFeedback { .. }) => "linear-feedback".to_string(),
            Policy::Analytic(AnalyticPolicy::Crra { .. }) => "crra".to_string(),
            Policy::Spliced {
                window,
                base,
                from,
                until,
            } => format!("{}@[{from},{until})+{}", window.label(), base.label()),
            Policy::Shifted { base, delta } => format!("{}{:+?}", base.label(), delta.as_slice()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> FeedbackTable<f64> {
        let times = vec![0.0, 0.5];
        let xs = vec![-1.0, 0.0, 1.0];
        let rows = vec![
            vec![Action::scalar(1.0), Action::scalar(0.0), Action::scalar(-1.0)],
            vec![Action::scalar(2.0), Action::scalar(2.0), Action::scalar(2.0)],
        ];
        FeedbackTable::new(times, xs, &rows)
    }

    #[test]
    fn nodes_reproduce_table_entries() {
        let t = table();
        for (i, &ti) in t.times().to_vec().iter().enumerate() {
            for (j, &xj) in t.xs().to_vec().iter().enumerate() {
                assert_eq!(t.evaluate(ti, xj), t.at_node(i, j));
            }
        }
    }

    #[test]
    fn linear_in_state_constant_in_time() {
        let t = table();
        assert_eq!(t.evaluate(0.25, 0.5).first(), -0.5);
        assert_eq!(t.evaluate(0.49, -0.5).first(), 0.5);
        assert_eq!(t.evaluate(0.9, 0.3).first(), 2.0);
        assert_eq!(t.evaluate(0.0, 7.0).first(), -1.0);
    }

    #[test]
    fn evaluation_is_clamped() {
        let bx = ActionBox::interval(-0.5, 0.5).unwrap();
        let p = Policy::Feedback(table());
        assert_eq!(p.evaluate(0.0, -1.0, &bx).first(), 0.5);
        let s = Policy::shifted(Policy::Constant(Action::scalar(0.4)), Action::scalar(0.3));
        assert_eq!(s.evaluate(0.0, 0.0, &bx).first(), 0.5);
    }

    #[test]
    fn splice_switches_on_window() {
        let bx = ActionBox::interval(-5.0, 5.0).unwrap();
        let p = Policy::spliced(
            Policy::Constant(Action::scalar(1.0)),
            Policy::Constant(Action::scalar(-1.0)),
            0.2,
            0.4,
        );
        assert_eq!(p.evaluate(0.1, 0.0, &bx).first(), -1.0);
        assert_eq!(p.evaluate(0.2, 0.0, &bx).first(), 1.0);
        assert_eq!(p.evaluate(0.4, 0.0, &bx).first(), -1.0);
    }

    #[test]
    fn constant_tables_are_detected() {
        assert!(table().as_constant().is_none());
        let c = FeedbackTable::new(
            vec![0.0],
            vec![0.0, 1.0],
            &[vec![Action::scalar(3.0), Action::scalar(3.0)]],
        );
        assert_eq!(c.as_constant(), Some(Action::scalar(3.0)));
    }

    #[test]
    fn crra_rule_in_both_encodings() {
        let mk = |consumption_only| {
            Policy::<f64>::Analytic(AnalyticPolicy::Crra {
                times: vec![0.0, 1.0],
                coefficient: vec![2.0, 1.0],
                eta: 1.0,
                beta: 0.3,
                consumption_only,
            })
        };
        let wide = ActionBox::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let a = mk(false).evaluate(0.0, 2.0, &wide);
        assert!((a.get(0) - 0.6).abs() < 1e-15 && (a.get(1) - 1.0).abs() < 1e-15);
        let frac = mk(true).evaluate(0.5, 2.0, &ActionBox::interval(0.0, 10.0).unwrap());
        assert!((frac.first() - 1.0 / 1.5).abs() < 1e-15);
    }
}
