"""Separable prediction model: a linear head on top of a ReLU feature map.

The model computes ``yhat = W h(x)`` with ``h(x) = [relu(W1 x + b1); 1]``.
The trailing constant feature folds the output-layer bias into ``W`` so that
the head is purely linear in its parameters; the extractor parameters
``(W1, b1)`` are the nonlinear block, handled as one flat vector ``theta``.

Loss convention: per-sample training loss is ``0.5 * ||y - yhat||^2``.
Reported metrics use ``mse = ||y - yhat||^2 / d_o`` averaged over samples
(mean over output components, matching the usual mean-squared-error).
"""

import numpy as np


def theta_dim(d, hidden):
    """Length of the flattened extractor parameter vector."""
    return hidden * d + hidden


def flatten_theta(w1, b1):
    """Concatenate (W1 row-major, b1) into one parameter vector."""
    return np.concatenate([np.ravel(w1), np.asarray(b1, dtype=np.float64)])


def unflatten_theta(theta, d, hidden):
    """Inverse of :func:`flatten_theta`; returns views where possible."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (theta_dim(d, hidden),):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({theta_dim(d, hidden)},)"
        )
    w1 = theta[: hidden * d].reshape(hidden, d)
    b1 = theta[hidden * d :]
    return w1, b1


class SeparableModel:
    """Parameter container with forward evaluation and exact gradients.

    Attributes
    ----------
    w1, b1 : extractor weights (hidden x d) and biases (hidden,); both are
        views into one flat parameter vector so in-place extractor updates
        can run on a single contiguous buffer (``theta_flat``)
    w : head matrix (d_o x p) with p = hidden + 1 (constant feature)
    """

    __slots__ = ("_theta", "w1", "b1", "w")

    def __init__(self, w1, b1, w):
        w1 = np.asarray(w1, dtype=np.float64)
        b1 = np.asarray(b1, dtype=np.float64)
        if w1.ndim != 2:
            raise ValueError(f"w1 must be 2-D, got shape {w1.shape}")
        hidden, d = w1.shape
        if b1.shape != (hidden,):
            raise ValueError(f"b1 has shape {b1.shape}, expected ({hidden},)")
        self._theta = flatten_theta(w1, b1)
        self.w1 = self._theta[: hidden * d].reshape(hidden, d)
        self.b1 = self._theta[hidden * d :]
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[1] != hidden + 1:
            raise ValueError(
                f"head has shape {self.w.shape}, expected (d_o, {hidden + 1})"
            )

    @property
    def dims(self):
        """(d, hidden, d_o)."""
        return self.w1.shape[1], self.w1.shape[0], self.w.shape[0]

    @property
    def p(self):
        return self.w1.shape[0] + 1

    @property
    def q(self):
        return theta_dim(self.w1.shape[1], self.w1.shape[0])

    def clone(self):
        return SeparableModel(self.w1.copy(), self.b1.copy(), self.w.copy())

    # -- parameters as flat vectors -------------------------------------

    @property
    def theta_flat(self):
        """The live flat extractor vector (w1 and b1 are views into it)."""
        return self._theta

    def get_theta(self):
        return self._theta.copy()

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self._theta.shape:
            raise ValueError(
                f"theta has shape {theta.shape}, expected {self._theta.shape}"
            )
        self._theta[:] = theta

    # -- single-sample evaluation ----------------------------------------

    def hidden_pre(self, x):
        """Pre-activations z = W1 x + b1."""
        return self.w1 @ np.asarray(x, dtype=np.float64) + self.b1

    def features(self, x):
        """Feature vector h = [relu(z); 1]; the last entry is always 1.0."""
        z = self.hidden_pre(x)
        h = np.empty(z.shape[0] + 1)
        np.maximum(z, 0.0, out=h[:-1])
        h[-1] = 1.0
        return h

    def forward(self, x):
        """Return (h, yhat) with yhat = W h."""
        h = self.features(x)
        return h, self.w @ h

    def loss(self, x, y):
        """Squared-error loss 0.5 * ||y - yhat||^2 for one sample."""
        _, yhat = self.forward(x)
        r = yhat - np.asarray(y, dtype=np.float64)
        return 0.5 * float(r @ r)

    def grad_alpha(self, x, y):
        """Head gradient (yhat - y) h' of the per-sample loss, shape (d_o, p)."""
        h, yhat = self.forward(x)
        return np.outer(yhat - np.asarray(y, dtype=np.float64), h)

    def grad_theta(self, x, y):
        """Extractor gradient of the per-sample loss, flattened to length q.

        Chain rule through the ReLU; the subgradient at exactly zero
        pre-activation is taken as 0.
        """
        x = np.asarray(x, dtype=np.float64)
        z = self.hidden_pre(x)
        h = np.maximum(z, 0.0)
        yhat = self.w[:, :-1] @ h + self.w[:, -1]
        resid = yhat - np.asarray(y, dtype=np.float64)
        dz = self.w[:, :-1].T @ resid
        dz[z <= 0.0] = 0.0
        return flatten_theta(np.outer(dz, x), dz)

    # -- batched evaluation ----------------------------------------------

    def features_batch(self, x_rows):
        """Return (Z, H) for a (n, d) batch; H is (n, p) with trailing ones."""
        x_rows = np.asarray(x_rows, dtype=np.float64)
        z = x_rows @ self.w1.T + self.b1
        h = np.empty((z.shape[0], z.shape[1] + 1))
        np.maximum(z, 0.0, out=h[:, :-1])
        h[:, -1] = 1.0
        return z, h

    def predict_batch(self, x_rows):
        _, h = self.features_batch(x_rows)
        return h @ self.w.T

    def mse(self, x_rows, y_rows):
        """Mean squared error over all output components and samples."""
        resid = self.predict_batch(x_rows) - np.asarray(y_rows, dtype=np.float64)
        return float(np.sum(resid * resid)) / (resid.shape[0] * self.dims[2])

    def accuracy(self, x_rows, y_rows):
        """Argmax classification accuracy against one-hot targets."""
        pred = np.argmax(self.predict_batch(x_rows), axis=1)
        truth = np.argmax(np.asarray(y_rows), axis=1)
        return float(np.mean(pred == truth))


def init_kaiming_uniform(d, hidden, d_o, seed):
    """Kaiming-uniform initialization, deterministic given the seed.

    W1 entries are uniform on +/- sqrt(6 / d) (ReLU-gain fan-in bound),
    b1 uniform on +/- 1 / sqrt(d), and the head is initialized with the
    same rule at fan-in p = hidden + 1. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if d < 1 or hidden < 1 or d_o < 1:
        raise ValueError(f"dims must be positive, got ({d}, {hidden}, {d_o})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound1 = np.sqrt(6.0 / d)
    w1 = rng.uniform(-bound1, bound1, size=(hidden, d))
    b1 = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=hidden)
    p = hidden + 1
    w = rng.uniform(-np.sqrt(6.0 / p), np.sqrt(6.0 / p), size=(d_o, p))
    return SeparableModel(w1, b1, w)


def full_objective_and_grad(model, x_rows, y_rows):
    """Mean loss and mean gradients over a dataset.

    Returns ``(f, grad_w, grad_theta)`` where f is the average of the
    per-sample losses ``0.5 ||y - yhat||^2`` and the gradients are averages
    of the per-sample gradients (head as a (d_o, p) matrix, extractor
    flattened).
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    y_rows = np.asarray(y_rows, dtype=np.float64)
    if x_rows.shape[0] == 0:
        raise ValueError("dataset is empty")
    n = x_rows.shape[0]
    z, h = model.features_batch(x_rows)
    resid = h @ model.w.T - y_rows
    f = 0.5 * float(np.sum(resid * resid)) / n
    grad_w = resid.T @ h / n
    dz = resid @ model.w[:, :-1]
    dz[z <= 0.0] = 0.0
    grad_theta = flatten_theta(dz.T @ x_rows / n, np.sum(dz, axis=0) / n)
    return f, grad_w, grad_theta


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, gain=None):
    """Write (dims, theta, W, optional gain matrix B) to an .npz file.

    float64 arrays round-trip bit-exactly through the npz container.
    """
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "dims": np.array(model.dims, dtype=np.int64),
        "w1": model.w1,
        "b1": model.b1,
        "w": model.w,
    }
    if gain is not None:
        payload["gain"] = np.asarray(gain, dtype=np.float64)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (model, gain-or-None)."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = SeparableModel(data["w1"], data["b1"], data["w"])
        gain = data["gain"].copy() if "gain" in data.files else None
    return model, gain
