"""Gradients, ADAM, parameter initialisation and the training loop."""

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bits import as_bitmatrix
from .circuit import ModelKind, check_params
from .mmd import DEFAULT_BATCH, DataBatch, _validate, as_schedule, mmd_terms, multi_bandwidth_terms
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitConfig:
    scale_two_qubit: float = 0.1
    scale_other: float = 0.0
    clamp_eps: float = 1e-6

    def __post_init__(self):
        for name in ("scale_two_qubit", "scale_other"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must lie in (0, 1/2), got {self.clamp_eps}")


def init_params_datadep(gates, data, cfg=InitConfig(), seed=0):
    """Initial angles from the data.

    Single-qubit gates get ``arcsin(sqrt(mean))`` of their column (so alone they
    reproduce the marginals), two-qubit gates ``scale_two_qubit`` times the
    covariance of the two columns in the +-1 convention, and larger gates
    normal noise of width ``scale_other``.
    """
    data = as_bitmatrix(data, gates.n_qubits)
    if len(data) == 0:
        raise ValueError("empty dataset")
    x = data.to_array(np.float64)
    means = np.clip(x.mean(axis=0), cfg.clamp_eps, 1.0 - cfg.clamp_eps)
    s = 1.0 - 2.0 * x
    cov = np.cov(s, rowvar=False, ddof=0) if len(data) > 1 else np.zeros((x.shape[1],) * 2)
    cov = np.atleast_2d(cov)
    rng = make_rng(seed, "init")
    noise = rng.normal(0.0, 1.0, size=len(gates)) * cfg.scale_other
    params = np.zeros(len(gates))
    for j, g in enumerate(gates.generators):
        if len(g) == 1:
            params[j] = math.asin(math.sqrt(means[g[0]]))
        elif len(g) == 2:
            params[j] = cfg.scale_two_qubit * cov[g[0], g[1]]
        else:
            params[j] = noise[j]
    return params


def init_params_uniform(gates, seed=0):
    """Angles uniform in ``[0, 2 pi)``."""
    return make_rng(seed, "init-uniform").uniform(0.0, 2.0 * math.pi, size=len(gates))


def loss_and_grad(gates, params, X, A, Z, kind=ModelKind.IQP):
    """Unbiased MMD^2 estimate on fixed batches and its exact gradient.

    The loss is computed by the same code as :func:`iqpgen.mmd.mmd2_unbiased`
    and so matches it bit for bit.
    """
    params, X, A, Z, kind = _validate(gates, params, X, A, Z, kind)
    value, _, grad = mmd_terms(gates, params, DataBatch(X), A, Z, kind, want_grad=True)
    return value, grad


@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size, **kw):
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state, params, grad, lr):
    """One bias-corrected ADAM update. Returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == state.first_moment.shape):
        raise ValueError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}"
        )
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * grad * grad
    t = state.step + 1
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step=t), new


class StopReason(enum.Enum):
    MAX_STEPS = "max_steps"
    CONVERGED = "converged"


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 1000
    learning_rate: float = 0.01
    batch_a: int = DEFAULT_BATCH
    batch_z: int = DEFAULT_BATCH
    schedule: tuple = (1.0,)
    convergence_window: int = 50
    convergence_rel_tol: float = 1e-3
    seed: int = 0
    minibatch: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schedule", as_schedule(self.schedule))
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and nonnegative")
        if self.batch_a < 1 or self.batch_z < 2:
            raise ValueError("need batch_a >= 1 and batch_z >= 2")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be positive")
        if self.minibatch == 1 or self.minibatch < 0:
            raise ValueError("minibatch must be 0 (full data) or at least 2")


@dataclass
class TrainReport:
    final_params: np.ndarray
    loss_history: list = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_STEPS
    initial_params: np.ndarray = None

    def losses(self):
        return np.array([l for _, l in self.loss_history])


def windowed_mean(losses, window):
    """Trailing moving average; entry ``i`` averages ``losses[max(0, i-window+1) : i+1]``."""
    losses = np.asarray(losses, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(losses)])
    i = np.arange(1, len(losses) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


def _converged(losses, window, tol):
    if len(losses) < 2 * window:
        return False
    cur = np.mean(losses[-window:])
    prev = np.mean(losses[-2 * window : -window])
    return abs(cur - prev) <= tol * max(abs(prev), 1e-300)


class NonFiniteLoss(RuntimeError):
    pass


def train(gates, data, init_cfg=InitConfig(), train_cfg=TrainConfig(), kind=ModelKind.IQP, init_params=None,
          callback=None):
    """Minimise the multi-bandwidth MMD^2 loss with ADAM.

    Every step draws fresh observables and z samples from seeds derived from
    ``(train_cfg.seed, step)``. Stops after ``max_steps`` or once the mean
    loss over the last ``convergence_window`` steps differs from that of the
    window before by less than ``convergence_rel_tol`` relative.
    """
    kind = ModelKind.parse(kind)
    data = as_bitmatrix(data, gates.n_qubits)
    if len(data) < 2:
        raise ValueError("training data needs at least two rows")
    cfg = train_cfg
    if init_params is None:
        params = init_params_datadep(gates, data, init_cfg, derive_seed(cfg.seed, "init"))
    else:
        params = check_params(gates, init_params).copy()
    report = TrainReport(params.copy(), initial_params=params.copy())
    full = DataBatch(data)
    state = OptimizerState.zeros(len(gates))
    losses = []
    for step in range(cfg.max_steps):
        step_seed = derive_seed(cfg.seed, "step", step)
        if cfg.minibatch and cfg.minibatch < len(data):
            pick = make_rng(step_seed, "minibatch").choice(len(data), cfg.minibatch, replace=False)
            batch = DataBatch(data[np.sort(pick)])
        else:
            batch = full
        loss, grad = multi_bandwidth_terms(
            gates, params, batch, cfg.schedule, cfg.batch_a, cfg.batch_z, step_seed, kind, want_grad=True
        )
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteLoss(f"non-finite loss or gradient at step {step}")
        state, params = adam_step(state, params, grad, cfg.learning_rate)
        losses.append(loss)
        report.loss_history.append((step, loss))
        if callback is not None:
            callback(step, loss, params)
        if _converged(losses, cfg.convergence_window, cfg.convergence_rel_tol):
            report.stop_reason = StopReason.CONVERGED
            log.info("converged at step %d", step)
            break
    report.final_params = params
    return report


def gradient_magnitude_histogram(gates, params, X, schedule, batch_sizes=(DEFAULT_BATCH, DEFAULT_BATCH),
                                 bins=20, seed=0, kind=ModelKind.IQP):
    """Histogram of ``|dL/dtheta_j|`` for one estimated gradient.

    Returns ``(counts, edges, magnitudes)``; bins are linear between 0 and the
    largest magnitude, collapsing to a single bin when all magnitudes are 0.
    """
    kind = ModelKind.parse(kind)
    params = check_params(gates, params)
    X = as_bitmatrix(X, gates.n_qubits)
    _, grad = multi_bandwidth_terms(
        gates, params, DataBatch(X), schedule, batch_sizes[0], batch_sizes[1], seed, kind, want_grad=True
    )
    mags = np.abs(grad)
    top = mags.max() if len(mags) else 0.0
    if top == 0.0:
        return np.array([len(mags)]), np.array([0.0, 0.0]), mags
    counts, edges = np.histogram(mags, bins=bins, range=(0.0, top))
    return counts, edges, mags
