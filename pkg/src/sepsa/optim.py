"""Parameter-update machinery.

Two head updaters for the linear block:

* recursive least squares (RLS): gain matrix B follows the rank-1
  inversion-lemma downdate ``B <- B - (B h h' B) / (1 + h' B h)`` and each
  head row moves by ``-(B h) * residual``;
* stochastic Newton: ``H <- H + gamma * (h h' - H)`` followed by
  ``W_i <- W_i - gamma * (H^{-1} h) * residual_i``.

The two coincide when the Newton step size is ``gamma_k = 1/(k + c)`` and
``H_0 = B_0^{-1} / c`` for any ``c > 0`` (both then solve the same
B_0-regularized least-squares problem; see ``verify.trajectory_equivalence``).
The harmonic ``1/k`` weighting is the ``c -> 0`` limit, which corresponds to
an unregularized start and is singular before p samples, so the offset form
is what gets implemented.

The nonlinear block (extractor parameters) is updated by one of the
first-order rules SGD, NAG, RMSprop, or Adam. The composite optimizer
applies the head update first, then evaluates the extractor gradient at the
*already updated* head (Gauss-Seidel order).
"""

import math
from dataclasses import dataclass

import numpy as np

from .backend import kernels as K
from .linalg import solve_spd
from .model import flatten_theta, full_objective_and_grad

DEFAULT_GAIN_INIT = 100.0  # delta in B_0 = delta * I; inverse ridge strength

THETA_UPDATER_KINDS = ("sgd", "nag", "rmsprop", "adam")


# --------------------------------------------------------------------------
# Head updaters
# --------------------------------------------------------------------------


@dataclass
class RlsState:
    """Gain matrix plus a shared reference to the model's head matrix."""

    b: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        p = self.w.shape[1]
        if self.b.shape != (p, p):
            raise ValueError(f"gain matrix is {self.b.shape}, head expects ({p}, {p})")
        self._scratch = np.empty(p)


def rls_state(model, gain_init=DEFAULT_GAIN_INIT):
    """Fresh RLS state with B_0 = gain_init * I."""
    return RlsState(np.eye(model.p) * gain_init, model.w)


def rls_step(state, h, y, yhat):
    """One recursive least-squares step; mutates W and B in place.

    The gain is downdated first; every head row then moves by
    ``-(B_new h) * (yhat_i - y_i)``. The post-step residual on the same
    sample shrinks by the factor ``1 / (1 + h' B_old h) <= 1``.
    """
    resid = np.asarray(yhat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    denom = K.rls_update(state.b, state.w, np.ascontiguousarray(h, dtype=np.float64),
                         resid, state._scratch)
    if not math.isfinite(denom):
        raise FloatingPointError(f"non-finite RLS denominator {denom}")
    return state.w, state.b


@dataclass
class NewtonState:
    """Running Hessian estimate for the stochastic-Newton head update."""

    h_hat: np.ndarray
    k: int = 0


def newton_state(model, h0_scale):
    """Fresh Newton state with H_0 = h0_scale * I."""
    return NewtonState(np.eye(model.p) * h0_scale, 0)


def newton_update(state, w, h, resid, gamma):
    """Low-level stochastic-Newton step on raw (h, residual) data."""
    if gamma == 0.0:
        return
    hh = state.h_hat
    hh *= 1.0 - gamma
    hh += gamma * np.outer(h, h)
    try:
        u = solve_spd(hh, h)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "Hessian estimate lost positive definiteness; increase the initial "
            f"estimate H_0 ({exc})"
        ) from exc
    w -= gamma * np.outer(resid, u)


def newton_step(state, model, x, y, gamma):
    """One stochastic-Newton head step on a sample; mutates W and H in place.

    The Hessian estimate moves toward h h' by the Robbins-Monro recursion,
    then the head rows move by ``-gamma * (H^{-1} h) * residual`` using an
    SPD solve rather than an explicit inverse.
    """
    h, yhat = model.forward(x)
    resid = yhat - np.asarray(y, dtype=np.float64)
    newton_update(state, model.w, h, resid, gamma)
    state.k += 1
    return model.w, state.h_hat


# --------------------------------------------------------------------------
# First-order updaters for the flat extractor vector
# --------------------------------------------------------------------------


class ThetaUpdater:
    """State machine for one of SGD / NAG / RMSprop / Adam.

    ``update(grad, beta)`` returns the step to *subtract* from the
    parameters. Accumulators are allocated on first use and must keep the
    same dimension afterwards. Hyperparameters follow the common defaults:
    momentum 0.9, RMSprop decay 0.9, Adam (0.9, 0.999), epsilon 1e-8.
    """

    def __init__(self, kind, momentum=0.9, rms_decay=0.9, adam_betas=(0.9, 0.999),
                 eps=1e-8):
        if kind not in THETA_UPDATER_KINDS:
            raise ValueError(f"unknown updater kind {kind!r}; use one of {THETA_UPDATER_KINDS}")
        self.kind = kind
        self.momentum = momentum
        self.rms_decay = rms_decay
        self.adam_betas = adam_betas
        self.eps = eps
        self.t = 0
        self._buf = None  # momentum buffer / squared-grad average / Adam m
        self._buf2 = None  # Adam v

    def _check_dims(self, grad):
        if self._buf is not None and self._buf.shape != grad.shape:
            raise ValueError(
                f"gradient dimension changed from {self._buf.shape} to {grad.shape}"
            )

    def update(self, grad, beta):
        """Step vector to subtract: theta_new = theta - update(grad, beta)."""
        grad = np.asarray(grad, dtype=np.float64)
        self._check_dims(grad)
        if self.kind == "sgd":
            return beta * grad
        if self.kind == "nag":
            if self._buf is None:
                self._buf = np.zeros_like(grad)
            self._buf *= self.momentum
            self._buf += grad
            return beta * (grad + self.momentum * self._buf)
        if self.kind == "rmsprop":
            if self._buf is None:
                self._buf = np.zeros_like(grad)
            self._buf *= self.rms_decay
            self._buf += (1.0 - self.rms_decay) * grad * grad
            return beta * grad / (np.sqrt(self._buf) + self.eps)
        # adam
        if self._buf is None:
            self._buf = np.zeros_like(grad)
            self._buf2 = np.zeros_like(grad)
        b1, b2 = self.adam_betas
        self.t += 1
        self._buf *= b1
        self._buf += (1.0 - b1) * grad
        self._buf2 *= b2
        self._buf2 += (1.0 - b2) * grad * grad
        m_hat = self._buf / (1.0 - b1 ** self.t)
        v_hat = self._buf2 / (1.0 - b2 ** self.t)
        return beta * m_hat / (np.sqrt(v_hat) + self.eps)


def theta_step(updater, theta, grad, beta):
    """Functional form: return the updated parameter vector."""
    return np.asarray(theta, dtype=np.float64) - updater.update(grad, beta)


# --------------------------------------------------------------------------
# Step-size schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Produces the per-iteration pair (gamma_k, beta_k).

    Constant mode returns (lr, lr) forever. Decaying mode returns
    ``(c * eta_k, d * eta_k)`` with ``eta_k = eta0 / (1 + k/tau)**rho`` and
    ``rho`` restricted to (0.5, 1] so that the eta series diverges while its
    squares converge.
    """

    mode: str
    lr: float = 0.0
    eta0: float = 0.0
    tau: float = 1.0
    rho: float = 1.0
    c: float = 1.0
    d: float = 1.0

    @staticmethod
    def constant(lr):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        return StepSchedule(mode="constant", lr=lr)

    @staticmethod
    def decaying(eta0, tau=1.0, rho=1.0, c=1.0, d=1.0):
        if eta0 <= 0.0 or tau <= 0.0 or c <= 0.0 or d <= 0.0:
            raise ValueError("eta0, tau, c, d must all be positive")
        if not 0.5 < rho <= 1.0:
            raise ValueError(f"rho must lie in (0.5, 1], got {rho}")
        return StepSchedule(mode="decaying", eta0=eta0, tau=tau, rho=rho, c=c, d=d)


def schedule_next(schedule, k):
    """(gamma_k, beta_k) at iteration k >= 1."""
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    if schedule.mode == "constant":
        return schedule.lr, schedule.lr
    eta = schedule.eta0 / (1.0 + k / schedule.tau) ** schedule.rho
    return schedule.c * eta, schedule.d * eta


def batch_decay_count(epoch_index, batch_size):
    """Samples to feed the head recursion in epoch i: ceil(0.5^(i-1) * batch)."""
    if epoch_index < 1:
        raise ValueError(f"epoch index must be >= 1, got {epoch_index}")
    return max(1, math.ceil(0.5 ** (epoch_index - 1) * batch_size))


# --------------------------------------------------------------------------
# Composite optimizer: second-order head, first-order extractor
# --------------------------------------------------------------------------


class SepsaOptimizer:
    """Per-iteration composite update in strict head-then-extractor order.

    Each ``step`` processes the selected head samples one at a time through
    the rank-1 recursion (features taken under the pre-step extractor), then
    applies a single first-order extractor step using the mean extractor
    gradient over the full batch, evaluated at the freshly updated head.
    """

    def __init__(self, model, schedule, theta_updater="sgd", head="rls",
                 gain_init=DEFAULT_GAIN_INIT, head_gamma=None, subset_rng=None):
        if head not in ("rls", "newton"):
            raise ValueError(f"head must be 'rls' or 'newton', got {head!r}")
        self.head = head
        self.schedule = schedule
        self.updater = (theta_updater if isinstance(theta_updater, ThetaUpdater)
                        else ThetaUpdater(theta_updater))
        self.rls = rls_state(model, gain_init) if head == "rls" else None
        # H_0 = B_0^{-1}/c with c = 1 pairs with gamma_k = 1/(k+1)
        self.newton = newton_state(model, 1.0 / gain_init) if head == "newton" else None
        self.head_gamma = head_gamma or (lambda k: 1.0 / (k + 1.0))
        self.subset_rng = subset_rng
        self.k = 0
        d, hidden, d_o = model.dims
        p = model.p
        self._z = np.empty(hidden)
        self._h = np.empty(p)
        self._yhat = np.empty(d_o)
        self._resid = np.empty(d_o)
        self._gtheta = np.zeros(model.q)
        self._gw1 = self._gtheta[: hidden * d].reshape(hidden, d)
        self._gb1 = self._gtheta[hidden * d:]

    @property
    def gain(self):
        """Current head gain / Hessian-estimate matrix."""
        return self.rls.b if self.head == "rls" else self.newton.h_hat

    def _head_update(self, model, h, resid):
        if self.head == "rls":
            denom = K.rls_update(self.rls.b, model.w, h, resid, self.rls._scratch)
            if not math.isfinite(denom):
                raise FloatingPointError(
                    f"non-finite RLS update at iteration {self.k}"
                )
        else:
            newton_update(self.newton, model.w, h, resid, self.head_gamma(self.k))
            self.newton.k += 1

    def step(self, model, x_batch, y_batch, rls_count=None):
        """One composite iteration over a batch; returns per-step metrics."""
        x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
        y_batch = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
        n = x_batch.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        self.k += 1
        _, beta = schedule_next(self.schedule, self.k)
        d_o = model.dims[2]

        if n == 1:
            x = np.ascontiguousarray(x_batch[0])
            y = y_batch[0]
            K.forward_sample(model.w1, model.b1, model.w, x, self._z, self._h, self._yhat)
            np.subtract(self._yhat, y, out=self._resid)
            batch_mse = float(self._resid @ self._resid) / d_o
            self._head_update(model, self._h, self._resid)
            # extractor gradient at the updated head; features are unchanged
            K.head_matvec(model.w, self._h, self._yhat)
            np.subtract(self._yhat, y, out=self._resid)
            self._gtheta[:] = 0.0
            K.grad_theta_sample(self._gw1, self._gb1, x, self._z, model.w,
                                self._resid, 1.0)
            grad = self._gtheta
            used = 1
        else:
            z, feats = model.features_batch(x_batch)
            resid = feats @ model.w.T - y_batch
            batch_mse = float(np.sum(resid * resid)) / (n * d_o)
            if rls_count is None or rls_count >= n:
                idx = range(n)
                used = n
            else:
                rng = self.subset_rng
                if rng is None:
                    rng = self.subset_rng = np.random.default_rng(0)
                idx = rng.choice(n, size=rls_count, replace=False)
                used = rls_count
            for i in idx:
                hi = feats[i]
                K.head_matvec(model.w, hi, self._yhat)
                np.subtract(self._yhat, y_batch[i], out=self._resid)
                self._head_update(model, hi, self._resid)
            # mean extractor gradient over the full batch, at the new head
            resid = feats @ model.w.T - y_batch
            dz = resid @ model.w[:, :-1]
            dz[z <= 0.0] = 0.0
            grad = flatten_theta(dz.T @ x_batch / n, np.sum(dz, axis=0) / n)

        model.theta_flat -= self.updater.update(grad, beta)
        return {"batch_mse": batch_mse, "rls_samples": used}


def sepsa_step(opt, model, x_batch, y_batch, rls_count=None):
    """Module-level alias for :meth:`SepsaOptimizer.step`."""
    return opt.step(model, x_batch, y_batch, rls_count=rls_count)


class FirstOrderOptimizer:
    """Baseline: one first-order rule over all parameters (extractor + head)."""

    def __init__(self, model, schedule, kind):
        self.schedule = schedule
        self.updater = ThetaUpdater(kind)
        self.k = 0
        self._q = model.q

    def step(self, model, x_batch, y_batch):
        x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
        y_batch = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
        if x_batch.shape[0] == 0:
            raise ValueError("empty batch")
        self.k += 1
        _, beta = schedule_next(self.schedule, self.k)
        f, grad_w, grad_theta = full_objective_and_grad(model, x_batch, y_batch)
        flat = np.concatenate([grad_theta, grad_w.ravel()])
        delta = self.updater.update(flat, beta)
        model.theta_flat -= delta[: self._q]
        model.w -= delta[self._q:].reshape(model.w.shape)
        batch_mse = 2.0 * f / model.dims[2]
        return {"batch_mse": batch_mse, "rls_samples": 0}
