"""Echo State Network reservoir: fixed random recurrent weights, trained readout.

The recurrent matrix is rescaled at init so its spectral radius hits the
requested target; with a target below one the echo-state property holds
and the reservoir forgets its initial condition under a shared input.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

POWER_ITER_LIMIT = 10_000


def spectral_radius(matrix, tol=1e-8, max_iter=POWER_ITER_LIMIT, seed=0):
    """Largest eigenvalue modulus via block power iteration.

    A 4-vector subspace iteration handles the complex-pair dominant
    eigenvalues a real nonsymmetric random matrix usually has; the
    estimate is converged when it is stable to ``tol`` over consecutive
    sweeps.
    """

    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ConfigError(f"spectral radius needs a square matrix, got {matrix.shape}")
    block = min(4, n)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, block)))
    estimate = 0.0
    stable = 0
    for _ in range(max_iter):
        z = matrix @ q
        q, _ = np.linalg.qr(z)
        small = q.T @ matrix @ q
        current = float(np.max(np.abs(np.linalg.eigvals(small))))
        if abs(current - estimate) < tol:
            stable += 1
            if stable >= 5:
                return current
        else:
            stable = 0
        estimate = current
    raise NumericError(
        f"power iteration did not converge within {max_iter} iterations"
    )


@dataclass
class Reservoir:
    """Fixed input and recurrent weights plus the leaky state update rate."""

    w_in: np.ndarray
    w: np.ndarray
    leak: float
    rho_target: float
    seed: int

    @property
    def size(self):
        return self.w.shape[0]


def esn_init(seed, n_reservoir=128, rho_target=0.9, input_scale=0.5, leak=1.0, n_inputs=11):
    """Sample and rescale a reservoir.

    Entries are uniform on a symmetric range; the recurrent matrix is
    scaled so its estimated spectral radius equals ``rho_target``.
    """

    if n_reservoir < 1:
        raise ConfigError("reservoir size must be >= 1")
    if rho_target <= 0:
        raise ConfigError("spectral radius target must be positive")
    if not 0.0 < leak <= 1.0:
        raise ConfigError("leak must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(n_reservoir, n_reservoir))
    rho = spectral_radius(w)
    if rho <= 0:
        raise NumericError("sampled reservoir has zero spectral radius")
    w *= rho_target / rho
    w_in = rng.uniform(-1.0, 1.0, size=(n_reservoir, n_inputs)) * input_scale
    w.setflags(write=False)
    w_in.setflags(write=False)
    return Reservoir(w_in=w_in, w=w, leak=leak, rho_target=rho_target, seed=seed)


def esn_step(reservoir, state, x_t):
    """state' = (1 - leak) state + leak tanh(W_in x + W state).

    ``state`` and ``x_t`` may be batched with the batch axis first.
    """

    pre = x_t @ reservoir.w_in.T + state @ reservoir.w.T
    return (1.0 - reservoir.leak) * state + reservoir.leak * np.tanh(pre)


def run_reservoir(reservoir, windows):
    """Drive the reservoir through each window from a zeroed state.

    ``windows`` is (B, S, d); returns the (B, N_r) final states.
    """

    bsz, steps, _ = windows.shape
    state = np.zeros((bsz, reservoir.size))
    for t in range(steps):
        state = esn_step(reservoir, state, windows[:, t, :])
    return state


def fit_readout_ridge(states, targets, lam=0.0):
    """One-shot readout weights W = Y X^T (X X^T + lam I)^(-1).

    ``states`` is (n, N_r) and ``targets`` (n, d'); the returned weights
    are (N_r, d') so predictions are ``states @ W``.
    """

    x = np.asarray(states, dtype=np.float64).T
    y = np.asarray(targets, dtype=np.float64).T
    gram = x @ x.T + lam * np.eye(x.shape[0])
    try:
        solved = np.linalg.solve(gram.T, (y @ x.T).T)
    except np.linalg.LinAlgError:
        raise NumericError(
            "ridge system is singular; use a regularization lam > 0"
        ) from None
    return solved
