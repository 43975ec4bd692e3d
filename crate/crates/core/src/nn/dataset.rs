use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Supervised data: one example per row of `inputs` and `targets`.
/// Classification targets are one-hot.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Matrix,
    task: Task,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, task: Task) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(dim_err!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            ));
        }
        if task == Task::Classification {
            for r in 0..targets.rows() {
                let row = targets.row(r);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::InvalidInput(format!(
                        "classification target row {r} is not one-hot"
                    )));
                }
            }
        }
        Ok(Self {
            inputs,
            targets,
            task,
        })
    }

    /// Classification data from integer labels.
    pub fn from_labels(inputs: Matrix, labels: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(dim_err!(
                "{} labels for {} input rows",
                labels.len(),
                inputs.rows()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let targets = Matrix::from_fn(labels.len(), classes, |r, c| {
            if labels[r] == c {
                1.0
            } else {
                0.0
            }
        });
        Self::new(inputs, targets, Task::Classification)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    /// Class index of every row (classification only).
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.require_classification()?;
        Ok((0..self.len()).map(|r| self.targets.argmax_row(r)).collect())
    }

    pub fn require_classification(&self) -> Result<()> {
        if self.task != Task::Classification {
            return Err(Error::Config(
                "operation needs a classification dataset".into(),
            ));
        }
        Ok(())
    }

    /// Errors unless `loss` suits this dataset's task.
    pub fn check_loss(&self, loss: LossKind) -> Result<()> {
        match (self.task, loss) {
            (Task::Regression, LossKind::Mse) | (Task::Classification, LossKind::CrossEntropy) => {
                Ok(())
            }
            (task, loss) => Err(Error::Config(format!(
                "loss {loss:?} is not valid for a {task:?} dataset"
            ))),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices)?,
            targets: self.targets.select_rows(indices)?,
            task: self.task,
        })
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of no datasets".into()))?;
        if parts.iter().any(|p| p.task != first.task) {
            return Err(Error::InvalidInput("concat across task kinds".into()));
        }
        let inputs: Vec<&Matrix> = parts.iter().map(|p| &p.inputs).collect();
        let targets: Vec<&Matrix> = parts.iter().map(|p| &p.targets).collect();
        Ok(Dataset {
            inputs: Matrix::vstack(&inputs)?,
            targets: Matrix::vstack(&targets)?,
            task: first.task,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_one_hot_targets() {
        let x = Matrix::zeros(2, 1);
        let t = Matrix::from_rows(&[&[1.0, 0.0], &[0.5, 0.5]]);
        assert!(Dataset::new(x, t, Task::Classification).is_err());
    }

    #[test]
    fn rejects_row_count_mismatch() {
        assert!(Dataset::new(Matrix::zeros(2, 1), Matrix::zeros(3, 1), Task::Regression).is_err());
    }

    #[test]
    fn loss_must_match_task() {
        let d = Dataset::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1), Task::Regression).unwrap();
        assert!(d.check_loss(LossKind::Mse).is_ok());
        assert!(matches!(d.check_loss(LossKind::CrossEntropy), Err(Error::Config(_))));
    }
}
