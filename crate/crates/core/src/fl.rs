//! Federated linear-model training: per-participant SGD steps, sample-count
//! weighted aggregation at the macro station, and the corrected global step.
//!
//! Two prediction tasks share this machinery. Task 1 (pedestrian density)
//! uses the plain squared error `sum_j (x_j.w - y_j)^2`. Task 2 (request
//! density) uses the ridge form `0.5 * sum_j (y_j - x_j.w)^2 + ridge * |w|^2`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no participants")]
    EmptyParticipants,
    #[error("training diverged: loss {loss:.3e} exceeds {limit:.3e}")]
    Divergence { loss: f64, limit: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid construction: {0}")]
    Invalid(String),
}

/// Which prediction task a model belongs to; selects the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Pedestrian density (squared error, no regularization).
    Pedestrian,
    /// Request density (half squared error plus ridge penalty).
    Request,
}

/// Weight vector of a local or global model for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub task: Task,
}

impl LinearModel {
    pub fn zeros(dim: usize, task: Task) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            task,
        }
    }

    pub fn new(weights: Vec<f64>, task: Task) -> Result<Self, FlError> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FlError::NonFinite("model weights"));
        }
        Ok(LinearModel { weights, task })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }
}

/// One participant's samples: row-major input matrix plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl TrainingBatch {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, FlError> {
        if rows.len() != targets.len() {
            return Err(FlError::DimensionMismatch(format!(
                "{} input rows vs {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if rows.is_empty() {
            return Err(FlError::Invalid("batch needs at least one sample".into()));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(FlError::DimensionMismatch("ragged input rows".into()));
        }
        let inputs: Vec<f64> = rows.into_iter().flatten().collect();
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(FlError::NonFinite("training batch"));
        }
        Ok(TrainingBatch {
            inputs,
            targets,
            dim,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.inputs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn target(&self, j: usize) -> f64 {
        self.targets[j]
    }
}

/// Schedule of one federated fit: how many aggregation rounds to run, how
/// many local SGD steps each participant takes per round, and the step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationRound {
    pub rounds: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
}

impl AggregationRound {
    pub fn new(rounds: usize, local_steps: usize, learning_rate: f64) -> Result<Self, FlError> {
        if local_steps == 0 {
            return Err(FlError::Invalid("local_steps must be >= 1".into()));
        }
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(FlError::Invalid("learning rate must be positive".into()));
        }
        Ok(AggregationRound {
            rounds,
            local_steps,
            learning_rate,
        })
    }
}

/// How the global model absorbs the locals each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlMode {
    /// The sample-weighted mean of the local models becomes the global model.
    #[default]
    FedAvg,
    /// The corrected global step: subtract the correction term from the
    /// global gradient, which algebraically steps by the weighted model mean.
    PaperFaithful,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(model: &LinearModel, batch: &TrainingBatch) -> Result<(), FlError> {
    if model.dim() != batch.dim() {
        return Err(FlError::DimensionMismatch(format!(
            "model dim {} vs batch dim {}",
            model.dim(),
            batch.dim()
        )));
    }
    Ok(())
}

/// Loss of `model` on `batch`.
///
/// Task 1: `sum_j (x_j.w - y_j)^2` (`ridge` ignored).
/// Task 2: `0.5 * sum_j (y_j - x_j.w)^2 + ridge * |w|^2`.
pub fn local_loss(model: &LinearModel, batch: &TrainingBatch, ridge: f64) -> Result<f64, FlError> {
    check_dims(model, batch)?;
    let sq: f64 = (0..batch.sample_count())
        .map(|j| {
            let r = model.predict(batch.row(j)) - batch.target(j);
            r * r
        })
        .sum();
    Ok(match model.task {
        Task::Pedestrian => sq,
        Task::Request => 0.5 * sq + ridge * dot(&model.weights, &model.weights),
    })
}

/// Gradient of [`local_loss`] with respect to the weights.
pub fn loss_gradient(model: &LinearModel, batch: &TrainingBatch, ridge: f64) -> Result<Vec<f64>, FlError> {
    check_dims(model, batch)?;
    let mut grad = vec![0.0; model.dim()];
    let scale = match model.task {
        Task::Pedestrian => 2.0,
        Task::Request => 1.0,
    };
    for j in 0..batch.sample_count() {
        let x = batch.row(j);
        let r = model.predict(x) - batch.target(j);
        for (g, &xv) in grad.iter_mut().zip(x) {
            *g += scale * r * xv;
        }
    }
    if model.task == Task::Request {
        for (g, &w) in grad.iter_mut().zip(&model.weights) {
            *g += 2.0 * ridge * w;
        }
    }
    Ok(grad)
}

/// Sum over the batch of the per-sample loss gradients at `model`.
///
/// The task-2 ridge term is carried per sample, so dividing by the sample
/// count leaves the penalty gradient unscaled and duplicated samples do not
/// change the mean.
fn sample_gradient_sum(model: &LinearModel, batch: &TrainingBatch, ridge: f64) -> Result<Vec<f64>, FlError> {
    check_dims(model, batch)?;
    let mut grad = vec![0.0; model.dim()];
    let scale = match model.task {
        Task::Pedestrian => 2.0,
        Task::Request => 1.0,
    };
    for j in 0..batch.sample_count() {
        let x = batch.row(j);
        let r = model.predict(x) - batch.target(j);
        for (g, &xv) in grad.iter_mut().zip(x) {
            *g += scale * r * xv;
        }
    }
    if model.task == Task::Request {
        let q = batch.sample_count() as f64;
        for (g, &w) in grad.iter_mut().zip(&model.weights) {
            *g += q * 2.0 * ridge * w;
        }
    }
    Ok(grad)
}

/// One local SGD step from the global model:
/// `w - (eta / Q_i) * sum_j grad f(w, x_j, y_j)`.
pub fn local_update(
    global: &LinearModel,
    batch: &TrainingBatch,
    eta: f64,
    ridge: f64,
) -> Result<LinearModel, FlError> {
    let grad = sample_gradient_sum(global, batch, ridge)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(FlError::NonFinite("local gradient"));
    }
    let q = batch.sample_count() as f64;
    let weights = global
        .weights
        .iter()
        .zip(&grad)
        .map(|(w, g)| w - eta / q * g)
        .collect();
    Ok(LinearModel {
        weights,
        task: global.task,
    })
}

/// Sample-count weighted mean of the local models.
pub fn aggregate(models: &[(LinearModel, usize)]) -> Result<LinearModel, FlError> {
    let (first, _) = models.first().ok_or(FlError::EmptyParticipants)?;
    let dim = first.dim();
    let task = first.task;
    let total: usize = models.iter().map(|(_, q)| q).sum();
    if total == 0 {
        return Err(FlError::Invalid("total sample count is zero".into()));
    }
    let mut weights = vec![0.0; dim];
    for (model, q) in models {
        if model.dim() != dim {
            return Err(FlError::DimensionMismatch("aggregate over unequal dims".into()));
        }
        if model.task != task {
            return Err(FlError::Invalid("aggregate over mixed tasks".into()));
        }
        for (acc, w) in weights.iter_mut().zip(&model.weights) {
            *acc += *q as f64 * w;
        }
    }
    for w in &mut weights {
        *w /= total as f64;
    }
    Ok(LinearModel { weights, task })
}

/// Gradient of the global cost `F(w) = (1/Q) * sum_i sum_j f(w, x_ij, y_ij)`.
pub fn global_gradient(
    global: &LinearModel,
    batches: &[TrainingBatch],
    ridge: f64,
) -> Result<Vec<f64>, FlError> {
    if batches.is_empty() {
        return Err(FlError::EmptyParticipants);
    }
    let mut grad = vec![0.0; global.dim()];
    let mut total = 0usize;
    for batch in batches {
        let g = sample_gradient_sum(global, batch, ridge)?;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
        total += batch.sample_count();
    }
    for g in &mut grad {
        *g /= total as f64;
    }
    Ok(grad)
}

/// Correction term for the global step: `grad F(w) - (1/Q) * sum_i Q_i w_i`.
pub fn global_correction(
    global: &LinearModel,
    models: &[(LinearModel, usize)],
    batches: &[TrainingBatch],
    ridge: f64,
) -> Result<Vec<f64>, FlError> {
    let grad_f = global_gradient(global, batches, ridge)?;
    let mean = aggregate(models)?;
    Ok(grad_f
        .iter()
        .zip(&mean.weights)
        .map(|(g, m)| g - m)
        .collect())
}

/// Global model step `w - eta * (grad F - correction)`.
pub fn global_update(
    global: &LinearModel,
    correction: &[f64],
    grad_f: &[f64],
    eta: f64,
) -> Result<LinearModel, FlError> {
    if correction.len() != global.dim() || grad_f.len() != global.dim() {
        return Err(FlError::DimensionMismatch("global update vectors".into()));
    }
    let weights = global
        .weights
        .iter()
        .zip(grad_f.iter().zip(correction))
        .map(|(w, (g, c))| w - eta * (g - c))
        .collect();
    Ok(LinearModel {
        weights,
        task: global.task,
    })
}

/// Run the federated fit and return the final global model.
///
/// Each round every participant takes `local_steps` SGD steps starting from
/// the current global model; the macro station then merges the locals,
/// either by adopting their weighted mean directly (`FedAvg`) or through the
/// corrected global step (`PaperFaithful`).
///
/// Aborts with [`FlError::Divergence`] when the total loss grows past
/// `1e6 *` its initial value.
pub fn train(
    participants: &[TrainingBatch],
    task: Task,
    ridge: f64,
    config: &AggregationRound,
    mode: FlMode,
    initial: Option<LinearModel>,
) -> Result<LinearModel, FlError> {
    if participants.is_empty() {
        return Err(FlError::EmptyParticipants);
    }
    let dim = participants[0].dim();
    if participants.iter().any(|b| b.dim() != dim) {
        return Err(FlError::DimensionMismatch("participants disagree on feature dim".into()));
    }
    let mut global = match initial {
        Some(m) => {
            if m.dim() != dim || m.task != task {
                return Err(FlError::DimensionMismatch("initial model".into()));
            }
            m
        }
        None => LinearModel::zeros(dim, task),
    };

    let total_loss = |g: &LinearModel| -> Result<f64, FlError> {
        let mut s = 0.0;
        for b in participants {
            s += local_loss(g, b, ridge)?;
        }
        Ok(s)
    };
    let initial_loss = total_loss(&global)?;
    let limit = 1e6 * initial_loss;

    for _ in 0..config.rounds {
        let mut locals = Vec::with_capacity(participants.len());
        for batch in participants {
            let mut local = global.clone();
            for _ in 0..config.local_steps {
                local = local_update(&local, batch, config.learning_rate, ridge)?;
            }
            locals.push((local, batch.sample_count()));
        }
        global = match mode {
            FlMode::FedAvg => aggregate(&locals)?,
            FlMode::PaperFaithful => {
                let grad_f = global_gradient(&global, participants, ridge)?;
                let correction = global_correction(&global, &locals, participants, ridge)?;
                global_update(&global, &correction, &grad_f, config.learning_rate)?
            }
        };
        let loss = total_loss(&global)?;
        if !loss.is_finite() || (initial_loss > 0.0 && loss > limit) {
            return Err(FlError::Divergence { loss, limit });
        }
    }
    Ok(global)
}
