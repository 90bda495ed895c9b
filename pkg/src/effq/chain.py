"""Extended-state Markov chain of stage play with a frozen Q-table.

An extended state pairs the current game state with the last joint action
played at every state, ``W = S x A^|S|``.  With Q frozen, stage play is a
homogeneous chain on W.  This module builds that chain, finds its
stationary law, and runs the two-chain coupling used to compare play under
an evolving Q with play under the frozen one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .game import StochasticGame, deviation_table
from .schedules import Schedule, epoch_weights

DEFAULT_BUDGET = 200_000
DENSE_SQUARING_MAX = 512


class BudgetError(ValueError):
    """Extended state space larger than the configured budget."""

    def __init__(self, size, budget):
        super().__init__(f"extended state space has |W| = {size} states, budget is {budget}")
        self.size = size
        self.budget = budget


class ConvergenceError(RuntimeError):
    pass


# -- extended state indexing ------------------------------------------------

class ExtendedSpace:
    """Flat indexing of ``(s, a(.))``: base state most significant, then the
    profile stored at state 0, state 1, ..."""

    def __init__(self, num_states: int, num_joint_actions: int):
        self.S = int(num_states)
        self.A = int(num_joint_actions)
        self.block = self.A ** self.S
        self.size = self.S * self.block
        self.place = self.A ** np.arange(self.S - 1, -1, -1, dtype=np.int64)

    @classmethod
    def of(cls, game: StochasticGame) -> "ExtendedSpace":
        return cls(game.num_states, game.num_joint_actions)

    def encode(self, s: int, profiles) -> int:
        profiles = np.asarray(profiles, dtype=np.int64)
        return int(s) * self.block + int(profiles @ self.place)

    def decode(self, w: int) -> tuple[int, np.ndarray]:
        s, rest = divmod(int(w), self.block)
        return s, (rest // self.place) % self.A

    def base_states(self) -> np.ndarray:
        return np.arange(self.size, dtype=np.int64) // self.block

    def profiles_at(self, x: int) -> np.ndarray:
        """Profile stored at state ``x`` for every extended state."""
        return (np.arange(self.size, dtype=np.int64) % self.block // self.place[x]) % self.A


# -- one-step transition rows -----------------------------------------------

class LocalKernel:
    """Transition law out of ``(s, a(.))`` as a function of ``(s, a(s))`` only.

    For each ``(s, a)`` the support is ``targets[s, a]`` (candidate new
    profiles at ``s``, the unchanged profile first) crossed with every next
    state; ``probs[s, a]`` has shape ``(K, S)``.  A unilateral switch by agent
    ``i`` to ``b`` carries ``(1/n) sigma_i[b] p(s'|s, new)``; keeping the
    profile collects the stay mass of every agent.
    """

    def __init__(self, game: StochasticGame, q: np.ndarray, tau: float, states=None):
        self.game = game
        self.tau = float(tau)
        S, A, n = game.num_states, game.num_joint_actions, game.n
        dev = deviation_table(game.actions_per_agent)
        self.K = 1 + sum(m - 1 for m in game.actions_per_agent)
        self.targets = np.zeros((S, A, self.K), dtype=np.int64)
        self.probs = np.zeros((S, A, self.K, S))
        q = np.asarray(q, dtype=np.float64)
        for s in (range(S) if states is None else states):
            for a in range(A):
                self._fill(q, s, a, dev, n)

    def _fill(self, q, s, a, dev, n):
        self.targets[s, a], self.probs[s, a] = local_row(self.game, q, self.tau, s, a, dev, self.K)


def local_row(game: StochasticGame, q, tau: float, s: int, a: int, dev=None, K=None):
    """Candidate profiles at ``s`` and the ``(K, S)`` law of (new profile, next state)."""
    if dev is None:
        dev = deviation_table(game.actions_per_agent)
    if K is None:
        K = 1 + sum(m - 1 for m in game.actions_per_agent)
    n = game.n
    mass = np.zeros(K)
    tgt = np.zeros(K, dtype=np.int64)
    tgt[0] = a
    pos = 1
    for i in range(n):
        cand = dev[i][a]
        z = q[s, cand] / tau
        e = np.exp(z - z.max())
        sig = e / e.sum()
        for c, b in enumerate(cand):
            if b == a:
                mass[0] += sig[c] / n
            else:
                tgt[pos] = b
                mass[pos] = sig[c] / n
                pos += 1
    return tgt, mass[:, None] * game.kernel[s, tgt, :]


def one_step_distribution(game: StochasticGame, q, tau: float, s: int, profiles):
    """Sparse row of the extended chain out of ``(s, profiles)``.

    Returns ``(targets, probs)``: flat extended-state indices and their
    probabilities.
    """
    space = ExtendedSpace.of(game)
    lk = LocalKernel(game, q, tau, states=[s])
    a = int(profiles[s])
    rest = space.encode(0, profiles) - a * int(space.place[s])
    cols = (np.arange(game.num_states)[None, :] * space.block + rest
            + lk.targets[s, a][:, None] * int(space.place[s]))
    return cols.ravel(), lk.probs[s, a].ravel()


@dataclass
class ExtendedChain:
    matrix: sp.csr_matrix
    q: np.ndarray
    tau: float
    space: ExtendedSpace

    @property
    def size(self) -> int:
        return self.space.size

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_extended_chain(game: StochasticGame, q, tau: float, budget: int = DEFAULT_BUDGET) -> ExtendedChain:
    """Transition matrix of stage play over ``W`` with Q frozen at ``q``.

    Stored sparse: a row has at most ``|S| * (1 + sum_i (|A^i| - 1))``
    nonzeros.
    """
    space = ExtendedSpace.of(game)
    if space.size > budget:
        raise BudgetError(space.size, budget)
    q = np.array(q, dtype=np.float64)
    lk = LocalKernel(game, q, tau)
    S = game.num_states
    base = space.base_states()
    w_all = np.arange(space.size, dtype=np.int64)
    rows, cols, vals = [], [], []
    for s in range(S):
        at_s = space.profiles_at(s)
        for a in range(game.num_joint_actions):
            ws = w_all[(base == s) & (at_s == a)]
            rest = ws - s * space.block - a * space.place[s]
            tgt = (np.arange(S)[None, :] * space.block
                   + lk.targets[s, a][:, None] * space.place[s])  # (K, S)
            c = rest[:, None] + tgt.ravel()[None, :]
            rows.append(np.repeat(ws, c.shape[1]))
            cols.append(c.ravel())
            vals.append(np.tile(lk.probs[s, a].ravel(), ws.size))
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.size, space.size),
    )
    mat.sum_duplicates()
    return ExtendedChain(mat, q, float(tau), space)


def epsilon_kappa(game: StochasticGame, q_bound: float, tau: float) -> tuple[float, int]:
    """Certified floor on every nonzero extended-chain entry and the reach horizon.

    Any Q with ``max |Q| <= q_bound`` gives softmax entries at least
    ``exp(-2 q_bound / tau) / |A^i|``, so each nonzero transition is at least
    ``(1/n) exp(-2 q_bound / tau) / max_i |A^i| * min p``.  The horizon is
    ``|S| * n``.
    """
    p_min = float(np.min(game.kernel))
    if not p_min > 0:
        raise ValueError("game is not irreducible: some transition probability is zero")
    if q_bound < 0 or not tau > 0:
        raise ValueError("need q_bound >= 0 and tau > 0")
    eps = (1.0 / game.n) * math.exp(-2.0 * q_bound / tau) / max(game.actions_per_agent) * p_min
    return eps, game.num_states * game.n


# -- stationary law ---------------------------------------------------------

def stationary_distribution(chain, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary law by power iteration from the uniform vector.

    Stops once the L1 change of an iterate and ``||x P - x||_1`` are both
    at most ``tol``.  For small chains (``|W| <= 512``) the iteration
    operator is squared after every step (``x <- x P^(2^j)``), which keeps
    slowly mixing low-temperature chains tractable; larger chains use plain
    sparse ``x <- x P``.
    """
    P = chain.matrix if isinstance(chain, ExtendedChain) else chain
    P = P.tocsr() if sp.issparse(P) else sp.csr_matrix(np.asarray(P, dtype=np.float64))
    N = P.shape[0]
    PT = P.T.tocsr()
    x = np.full(N, 1.0 / N)
    dense = N <= DENSE_SQUARING_MAX
    M = P.toarray() if dense else None
    for _ in range(max_iter):
        x_new = (x @ M) if dense else PT @ x
        x_new = np.maximum(x_new, 0.0)
        x_new /= x_new.sum()
        delta = float(np.abs(x_new - x).sum())
        x = x_new
        if delta <= tol and float(np.abs(PT @ x - x).sum()) <= tol:
            return x
        if dense:
            M = M @ M
            M /= M.sum(axis=1, keepdims=True)
    raise ConvergenceError(f"power iteration did not reach tol={tol} in {max_iter} iterations")


def state_action_marginal(dist, space: ExtendedSpace, s: int, conditional: bool = True) -> np.ndarray:
    """Distribution of the profile stored at ``s``.

    ``conditional=True`` restricts to extended states whose base state is
    ``s`` and renormalises; otherwise the profile at ``s`` is marginalised
    over all of ``W``.
    """
    dist = np.asarray(dist, dtype=np.float64)
    at_s = space.profiles_at(s)
    weights = dist
    if conditional:
        weights = np.where(space.base_states() == s, dist, 0.0)
    out = np.bincount(at_s, weights=weights, minlength=space.A)
    total = out.sum()
    if not total > 0:
        raise ValueError(f"no probability mass on base state {s}")
    return out / total


def joint_softmax(q_row, tau: float) -> np.ndarray:
    z = np.asarray(q_row, dtype=np.float64) / tau
    e = np.exp(z - z.max())
    return e / e.sum()


# -- distances and couplings ------------------------------------------------

def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def _sample(p, u):
    cdf = np.cumsum(p)
    j = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(j, cdf.size - 1)


def maximal_coupling_sample(p, q, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(x, y)`` with ``x ~ p``, ``y ~ q`` and ``P(x != y) = TV(p, q)``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    overlap = np.minimum(p, q)
    tv = max(0.0, 1.0 - float(overlap.sum()))
    if rng.random() >= tv:
        x = _sample(overlap, rng.random())
        return x, x
    x = _sample(p - overlap, rng.random())
    y = _sample(q - overlap, rng.random())
    return x, y


# -- coupled simulation -----------------------------------------------------

@dataclass
class CouplingResult:
    matched: np.ndarray  # (pairs, T + 1) bool, stage 0 is the start state
    kappa: int
    epsilon: float
    epoch_start: int
    max_tv: float  # largest one-step TV between evolving and frozen rows seen
    m_index: np.ndarray = field(init=False)

    def __post_init__(self):
        self.matched = np.atleast_2d(self.matched)
        self.m_index = np.arange(self.matched.shape[1]) // self.kappa

    @property
    def pairs(self) -> int:
        return self.matched.shape[0]

    def mismatch_rate(self) -> np.ndarray:
        """Empirical ``P(w_t != w_hat_t)`` per stage."""
        return 1.0 - self.matched.mean(axis=0)

    def half_width(self, z: float = 3.0) -> np.ndarray:
        p = self.mismatch_rate()
        return z * np.sqrt(p * (1 - p) / self.pairs)

    def per_m(self, z: float = 3.0):
        """Worst stage in each window ``[m kappa, (m+1) kappa)``.

        Returns ``(m, rate, half_width)`` arrays.
        """
        rate = self.mismatch_rate()
        hw = self.half_width(z)
        ms = np.unique(self.m_index)
        worst = np.array([np.argmax(np.where(self.m_index == m, rate, -1.0)) for m in ms])
        return ms, rate[worst], hw[worst]

    @staticmethod
    def merge(results: list["CouplingResult"]) -> "CouplingResult":
        r0 = results[0]
        return CouplingResult(
            np.vstack([r.matched for r in results]), r0.kappa, r0.epsilon, r0.epoch_start,
            max(r.max_tv for r in results),
        )


def _draw_extended(space, rng, init):
    if init is None:
        return int(rng.integers(space.size))
    init = np.asarray(init)
    if init.ndim == 0:
        return int(init)
    return _sample(init, rng.random())


def coupled_run(game: StochasticGame, frozen_q, schedule: Schedule, tau: float,
                epoch_start: int, T: int, seed: int, init=None, fictional_init="same",
                main_q=None, freeze_both: bool = False, q_bound: float | None = None,
                local_frozen: LocalKernel | None = None) -> CouplingResult:
    """One paired run of the evolving (main) and frozen (fictional) chains.

    The main chain starts from ``main_q`` (default ``frozen_q``) and updates Q
    with ``beta_{epoch_start + t}`` after each stage; with ``freeze_both`` it
    keeps ``frozen_q`` too.  While the two extended states agree, the next
    pair is drawn by maximal coupling of their one-step rows; otherwise the
    chains move independently.

    ``init`` is a flat extended state, a distribution over ``W`` or ``None``
    (uniform).  ``fictional_init`` is ``"same"`` or one of those.
    """
    space = ExtendedSpace.of(game)
    rng = np.random.default_rng(seed)
    frozen_q = np.asarray(frozen_q, dtype=np.float64)
    q = np.array(frozen_q if main_q is None else main_q, dtype=np.float64)
    if q_bound is None:
        q_bound = max(float(np.max(np.abs(frozen_q))), float(np.max(np.abs(q))))
    eps, kappa = epsilon_kappa(game, q_bound, tau)
    fixed = local_frozen if local_frozen is not None else LocalKernel(game, frozen_q, tau)
    dev = deviation_table(game.actions_per_agent)
    S = game.num_states
    idx = np.arange(S)

    w_main = _draw_extended(space, rng, init)
    w_fic = w_main if isinstance(fictional_init, str) and fictional_init == "same" \
        else _draw_extended(space, rng, fictional_init)
    s_m, prof_m = space.decode(w_main)
    s_f, prof_f = space.decode(w_fic)
    prof_m = prof_m.astype(np.int64)
    prof_f = prof_f.astype(np.int64)

    betas = schedule.betas(epoch_start, epoch_start + T)
    matched = np.zeros(T + 1, dtype=bool)
    matched[0] = s_m == s_f and np.array_equal(prof_m, prof_f)
    max_tv = 0.0
    live = not freeze_both
    for t in range(T):
        beta = 0.0 if freeze_both else float(betas[t])
        a_m, a_f = int(prof_m[s_m]), int(prof_f[s_f])
        if live and np.any(q != frozen_q):
            p_m = local_row(game, q, tau, s_m, a_m, dev, fixed.K)[1].ravel()
        else:
            p_m = fixed.probs[s_m, a_m].ravel()
        p_hat_at_m = fixed.probs[s_m, a_m].ravel()
        max_tv = max(max_tv, tv_distance(p_m, p_hat_at_m))
        if matched[t]:
            x, y = maximal_coupling_sample(p_m, p_hat_at_m, rng)
        else:
            x = _sample(p_m, rng.random())
            y = _sample(fixed.probs[s_f, a_f].ravel(), rng.random())
        k_m, nxt_m = divmod(x, S)
        k_f, nxt_f = divmod(y, S)
        prof_m[s_m] = fixed.targets[s_m, a_m, k_m]
        prof_f[s_f] = fixed.targets[s_f, a_f, k_f]
        if beta != 0.0:
            cont = q[idx, prof_m]
            q += beta * (game.reward + game.gamma * (game.kernel @ cont) - q)
        s_m, s_f = nxt_m, nxt_f
        matched[t + 1] = s_m == s_f and np.array_equal(prof_m, prof_f)
    return CouplingResult(matched, kappa, eps, epoch_start, max_tv)


def coupling_experiment(game: StochasticGame, frozen_q, schedule: Schedule, tau: float,
                        epoch_start: int, T: int, pairs: int, base_seed: int = 0,
                        **kwargs) -> CouplingResult:
    """``pairs`` independent paired runs with seeds ``base_seed + j``."""
    frozen_q = np.asarray(frozen_q, dtype=np.float64)
    fixed = LocalKernel(game, frozen_q, tau)
    return CouplingResult.merge([
        coupled_run(game, frozen_q, schedule, tau, epoch_start, T, base_seed + j,
                    local_frozen=fixed, **kwargs)
        for j in range(pairs)
    ])


# -- analytic bounds --------------------------------------------------------

def mismatch_bound(epsilon: float, lam: float, kappa: int, m: int) -> tuple[float, float]:
    """``(1 - (eps lam)^kappa)^m + (1 - lam^kappa)(1 + (eps lam)^kappa) / (eps lam)^kappa``.

    Returns ``(raw, clamped)``; ``clamped`` is ``raw`` limited to ``[0, 1]``.
    """
    if not (0 < epsilon <= 1 and 0 < lam <= 1 and kappa >= 1 and m >= 0):
        raise ValueError("need eps, lam in (0, 1], kappa >= 1, m >= 0")
    el = (epsilon * lam) ** kappa
    lk = lam ** kappa
    first = (1.0 - el) ** m
    if lk == 1.0:
        second = 0.0
    elif el == 0.0:
        second = math.inf
    else:
        second = (1.0 - lk) * (1.0 + el) / el
    raw = first + second
    return raw, min(max(raw, 0.0), 1.0)


def soft_vs_hard_gap(q, tau: float, s: int | None = None) -> tuple[float, float]:
    """``E_{a ~ softmax}[Q(s,a)] - max_a Q(s,a)`` and its ``tau ln|A|`` bound.

    ``q`` is a Q-table (row ``s`` used) or, with ``s=None``, a single row.
    """
    row = np.asarray(q, dtype=np.float64)
    if s is not None:
        row = row[s]
    if not tau > 0:
        raise ValueError("tau must be positive")
    sig = joint_softmax(row, tau)
    top = float(row.max())
    # centred on the max: every term is <= 0, so the sign is exact
    gap = float(sig @ (row - top))
    return gap, tau * math.log(row.size)


@dataclass
class SubErrorReport:
    q_bar: float
    epsilon: float
    kappa: int
    beta_kT: float
    e_a_bound: float
    e_bc_bound: float
    e_d_bound: float
    softmax_error_bound: float
    lam: float | None = None
    Lam: float | None = None
    e_b_epoch_bound: float | None = None
    regime: str = "ok"

    def as_dict(self) -> dict:
        return dict(vars(self))


def sub_error_bounds(game: StochasticGame, schedule: Schedule, k: int, T: int, tau: float,
                     q_bound: float | None = None, lipschitz: float | None = None) -> SubErrorReport:
    """Analytic bounds on the four pieces of the epoch-``k`` tracking error.

    * isolation of the evolving Q: ``2 q_bar T beta_kT``
    * coupling and finite-epoch pieces, asymptotically: ``(1/T) 2 q_bar kappa / eps^kappa``
    * soft- versus hard-max: ``tau ln|A|``

    With a Lipschitz constant ``C`` for the one-step TV in Q, also reports
    ``lambda = 1 - C q_bar T beta_kT`` and the finite-``k`` coupling bound
    ``2 q_bar Lam + 2 q_bar kappa (alpha_kT / alpha_(k)) / (eps lam)^kappa``.
    """
    q_bar = game.q_bound if q_bound is None else float(q_bound)
    eps, kappa = epsilon_kappa(game, q_bar, tau)
    beta0 = schedule.beta(k * T)
    ek = eps ** kappa
    e_bc = math.inf if ek == 0.0 else 2.0 * q_bar * kappa / (T * ek)
    A = game.num_joint_actions
    rep = SubErrorReport(
        q_bar=q_bar, epsilon=eps, kappa=kappa, beta_kT=beta0,
        e_a_bound=2.0 * q_bar * T * beta0,
        e_bc_bound=e_bc,
        e_d_bound=tau * math.log(A),
        softmax_error_bound=tau * math.log(A) / (1.0 - game.gamma),
    )
    if lipschitz is not None:
        lam = 1.0 - lipschitz * q_bar * T * beta0
        rep.lam = lam
        if lam <= 0.0:
            rep.regime = "epoch too early / stepsize too large for the coupling regime (lambda <= 0)"
        else:
            lam = min(lam, 1.0)
            el = (eps * lam) ** kappa
            w = epoch_weights(schedule, k, T)
            if el == 0.0:
                rep.Lam = 0.0 if lam == 1.0 else math.inf
                rep.e_b_epoch_bound = math.inf
            else:
                rep.Lam = (1.0 - lam) * (1.0 + el) / el
                ratio = w.alphas[0] / w.total if w.total > 0 else 0.0
                rep.e_b_epoch_bound = 2.0 * q_bar * rep.Lam + 2.0 * q_bar * kappa * ratio / el
    return rep


def measure_lipschitz(game: StochasticGame, q, tau: float, scale: float = 1e-3,
                      samples: int = 200, seed: int = 0) -> float:
    """Empirical ``max TV(row_Q, row_{Q+D}) / max|D|`` over random perturbations ``D``.

    Rows depend on ``(s, a(s))`` only, and the map from local outcomes to
    extended states is injective, so local rows give the exact TV.
    """
    rng = np.random.default_rng(seed)
    q = np.asarray(q, dtype=np.float64)
    base = LocalKernel(game, q, tau)
    best = 0.0
    for _ in range(samples):
        d = rng.uniform(-scale, scale, size=q.shape)
        norm = float(np.max(np.abs(d)))
        other = LocalKernel(game, q + d, tau)
        tv = 0.5 * np.abs(base.probs - other.probs).sum(axis=(2, 3)).max()
        best = max(best, float(tv) / norm)
    return best
