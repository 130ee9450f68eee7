/// What a policy may see when choosing the control at step `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Mean-field term `m(t) = E[ρ x]` at the current node.
    pub m: f64,
}

/// A non-anticipative control law.
///
/// Each path carries its own `State` (e.g. a filter estimate). `control` is
/// called before the step's increments are revealed; `observe` is called
/// afterwards with the applied control and the path's observation increment,
/// so the state stays adapted to the observation filtration.
pub trait ControlPolicy: Sync {
    type State: Clone + Send + Sync;

    fn label(&self) -> String;

    fn init(&self, x0: f64) -> Self::State;

    fn control(&self, ctx: &StepContext, x: f64, state: &Self::State) -> f64;

    fn observe(&self, _ctx: &StepContext, _state: &mut Self::State, _u: f64, _dy: f64) {}
}

/// `u ≡ value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantControl(pub f64);

impl ControlPolicy for ConstantControl {
    type State = ();

    fn label(&self) -> String {
        format!("constant({})", self.0)
    }

    fn init(&self, _x0: f64) {}

    fn control(&self, _ctx: &StepContext, _x: f64, _state: &()) -> f64 {
        self.0
    }
}

/// Deterministic control schedule indexed by step.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoop(pub Vec<f64>);

impl ControlPolicy for OpenLoop {
    type State = ();

    fn label(&self) -> String {
        "open-loop".to_string()
    }

    fn init(&self, _x0: f64) {}

    fn control(&self, ctx: &StepContext, _x: f64, _state: &()) -> f64 {
        self.0[ctx.step]
    }
}

/// Full-state feedback `u = g(t, x, m)`. Not observation-adapted; meant for
/// tests and fully observed comparisons.
pub struct StateFeedback<F>(pub F);

impl<F> ControlPolicy for StateFeedback<F>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    type State = ();

    fn label(&self) -> String {
        "state-feedback".to_string()
    }

    fn init(&self, _x0: f64) {}

    fn control(&self, ctx: &StepContext, x: f64, _state: &()) -> f64 {
        (self.0)(ctx.t, x, ctx.m)
    }
}
