//! Closed-form toy task families for verifying the meta-learning loops
//! against hand-derived gradients and Hessian-vector products.

use ndarray::Array2;

use crate::autodiff::ParamSet;
use crate::error::ModelError;

use super::{MetaModel, Scope, StepCtx};

/// Scalar quadratic family: task `a` has loss `(theta - a)^2` on every
/// split.
pub struct Quadratic;

#[derive(Clone, Debug)]
pub struct QuadraticTask {
    pub id: String,
    pub a: f64,
}

impl Quadratic {
    pub fn params(theta: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("theta", Array2::from_elem((1, 1), theta));
        ps
    }
}

impl MetaModel for Quadratic {
    type Task = QuadraticTask;

    fn task_id(&self, task: &QuadraticTask) -> String {
        task.id.clone()
    }

    fn substep_grad(
        &self,
        ps: &ParamSet,
        task: &QuadraticTask,
        _scope: Scope,
        _ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        let theta = ps.require("theta")?[[0, 0]];
        let d = theta - task.a;
        let mut grad = ps.zeros_like();
        grad.get_mut("theta").unwrap()[[0, 0]] = 2.0 * d;
        Ok((d * d, grad))
    }

    fn query_grad(
        &self,
        ps: &ParamSet,
        task: &QuadraticTask,
        ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        self.substep_grad(ps, task, Scope::Support, ctx)
    }

    fn substep_hvp(
        &self,
        _ps: &ParamSet,
        _task: &QuadraticTask,
        _scope: Scope,
        _ctx: StepCtx,
        v: &ParamSet,
    ) -> Result<ParamSet, ModelError> {
        // Constant Hessian 2.
        let mut hv = v.clone();
        hv.scale(2.0);
        Ok(hv)
    }
}

/// Two-parameter linear regression with distinct support and query sets:
/// `L(w; X, y) = mean_i (x_i . w - y_i)^2`.
pub struct LinReg;

#[derive(Clone, Debug)]
pub struct LinRegTask {
    pub id: String,
    pub sx: Array2<f64>,
    pub sy: Array2<f64>,
    pub qx: Array2<f64>,
    pub qy: Array2<f64>,
}

impl LinReg {
    pub fn params(w: &[f64]) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(
            "w",
            Array2::from_shape_vec((w.len(), 1), w.to_vec()).unwrap(),
        );
        ps
    }

    fn loss_grad(ps: &ParamSet, x: &Array2<f64>, y: &Array2<f64>) -> (f64, ParamSet) {
        let w = ps.get("w").unwrap();
        let n = x.nrows() as f64;
        let resid = x.dot(w) - y;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let mut grad = ps.zeros_like();
        *grad.get_mut("w").unwrap() = x.t().dot(&resid) * (2.0 / n);
        (loss, grad)
    }
}

impl MetaModel for LinReg {
    type Task = LinRegTask;

    fn task_id(&self, task: &LinRegTask) -> String {
        task.id.clone()
    }

    fn substep_grad(
        &self,
        ps: &ParamSet,
        task: &LinRegTask,
        _scope: Scope,
        _ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        Ok(Self::loss_grad(ps, &task.sx, &task.sy))
    }

    fn query_grad(
        &self,
        ps: &ParamSet,
        task: &LinRegTask,
        _ctx: StepCtx,
    ) -> Result<(f64, ParamSet), ModelError> {
        Ok(Self::loss_grad(ps, &task.qx, &task.qy))
    }

    fn substep_hvp(
        &self,
        _ps: &ParamSet,
        task: &LinRegTask,
        _scope: Scope,
        _ctx: StepCtx,
        v: &ParamSet,
    ) -> Result<ParamSet, ModelError> {
        // H = (2/n) X^T X, independent of w.
        let n = task.sx.nrows() as f64;
        let vw = v.get("w").unwrap();
        let mut hv = v.zeros_like();
        *hv.get_mut("w").unwrap() = task.sx.t().dot(&task.sx.dot(vw)) * (2.0 / n);
        Ok(hv)
    }
}
