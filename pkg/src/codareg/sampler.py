"""No-U-Turn sampler with dual-averaging step size and diagonal metric.

Trajectories are built by recursive doubling with multinomial selection of
the next state (biased progressive sampling across the top-level doublings,
uniform within subtrees) and the generalized no-U-turn check applied to the
merged tree and across each pair of merged subtrees. Warmup follows the
usual window schedule: a fast step-size-only buffer, doubling slow windows
that estimate the diagonal inverse metric, and a closing step-size buffer.

The target is any callable ``target(q) -> (log_density, gradient)``.
It may raise ``FloatingPointError`` (or return non-finite values) for points
outside its support; such points end the trajectory as divergent.
"""

from dataclasses import asdict, dataclass, field
import csv
import json
import math

import numpy as np
from joblib import Parallel, delayed

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "SamplerError",
    "nuts_sample",
    "leapfrog_trajectory",
]

_MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    """Sampling could not start or warmup collapsed."""


@dataclass(frozen=True)
class SamplerConfig:
    """Run shape and tuning targets.

    The defaults mirror a long production run (3 chains, 9000 warmup and 1000
    kept iterations). :meth:`light` gives the desk-scale profile.
    """

    chains: int = 3
    warmup: int = 9000
    samples: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_jitter: float = 2.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if self.warmup < 100:
            raise ValueError("warmup must be at least 100")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if not 0.6 <= self.target_accept < 1.0:
            raise ValueError("target_accept must lie in [0.6, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be non-negative")

    @classmethod
    def light(cls, **overrides):
        """Four chains of 1000 warmup plus 1000 kept iterations."""
        params = dict(chains=4, warmup=1000, samples=1000)
        params.update(overrides)
        return cls(**params)


@dataclass
class PosteriorDraws:
    """Kept draws and per-iteration sampler statistics.

    Arrays indexed ``[chain, iteration]``; ``values`` has a trailing
    parameter axis. Divergent iterations are flagged in ``divergent`` and kept.
    """

    names: list
    values: np.ndarray
    log_density: np.ndarray
    accept_stat: np.ndarray
    step_size: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    inv_metric: np.ndarray = None
    warmup_divergences: np.ndarray = None
    config: dict = field(default_factory=dict)

    @property
    def n_chains(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    @property
    def dim(self):
        return self.values.shape[2]

    def get(self, name):
        """Draws of one parameter, shape ``(chains, draws)``."""
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        return self.values[:, :, j]

    def flat(self):
        """All draws stacked chain after chain, shape ``(chains * draws, dim)``."""
        return self.values.reshape(-1, self.dim)

    @property
    def divergence_rate(self):
        return float(self.divergent.mean())

    def stats_dict(self):
        return {
            "names": list(self.names),
            "chains": self.n_chains,
            "draws": self.n_draws,
            "divergences": int(self.divergent.sum()),
            "divergence_rate": self.divergence_rate,
            "warmup_divergences": [int(v) for v in np.ravel(self.warmup_divergences)]
            if self.warmup_divergences is not None
            else None,
            "mean_accept_stat": [float(v) for v in self.accept_stat.mean(axis=1)],
            "step_size": [float(v) for v in self.step_size[:, 0]],
            "mean_tree_depth": [float(v) for v in self.tree_depth.mean(axis=1)],
            "max_tree_depth_hits": int(np.sum(self.tree_depth >= self.config.get("max_tree_depth", np.inf))),
            "inv_metric": self.inv_metric.tolist() if self.inv_metric is not None else None,
            "config": self.config,
        }

    def to_csv(self, path, sidecar=None):
        """Write ``chain,iter,<names...>`` rows and optionally a JSON sidecar."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            # names such as beta[a,0] hold commas, so the header is quoted as needed
            csv.writer(fh, lineterminator="\n").writerow(["chain", "iter"] + list(self.names))
            for c in range(self.n_chains):
                for i in range(self.n_draws):
                    row = [str(c), str(i)] + [repr(float(v)) for v in self.values[c, i]]
                    fh.write(",".join(row) + "\n")
        if sidecar is not None:
            stats = self.stats_dict()
            stats["per_iteration"] = {
                key: getattr(self, key).tolist()
                for key in ("log_density", "accept_stat", "step_size", "tree_depth", "n_leapfrog", "divergent", "energy")
            }
            with open(sidecar, "w", encoding="utf-8") as fh:
                json.dump(stats, fh, indent=1, sort_keys=True)

    @classmethod
    def from_csv(cls, path, sidecar=None):
        """Read draws written by :meth:`to_csv`. Statistics come from the sidecar."""
        with open(path, encoding="utf-8", newline="") as fh:
            header = next(csv.reader(fh))
        names = header[2:]
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        chains = data[:, 0].astype(int)
        n_chains = int(chains.max()) + 1
        n_draws = data.shape[0] // n_chains
        values = data[:, 2:].reshape(n_chains, n_draws, len(names))
        shape = (n_chains, n_draws)
        stats = {}
        config = {}
        inv_metric = None
        if sidecar is not None:
            with open(sidecar, encoding="utf-8") as fh:
                meta = json.load(fh)
            stats = {k: np.array(v) for k, v in meta.get("per_iteration", {}).items()}
            config = meta.get("config", {})
            inv_metric = np.array(meta["inv_metric"]) if meta.get("inv_metric") is not None else None
        return cls(
            names=names,
            values=values,
            log_density=stats.get("log_density", np.full(shape, np.nan)),
            accept_stat=stats.get("accept_stat", np.full(shape, np.nan)),
            step_size=stats.get("step_size", np.full(shape, np.nan)),
            tree_depth=stats.get("tree_depth", np.zeros(shape, dtype=int)),
            n_leapfrog=stats.get("n_leapfrog", np.zeros(shape, dtype=int)),
            divergent=stats.get("divergent", np.zeros(shape, dtype=bool)).astype(bool),
            energy=stats.get("energy", np.full(shape, np.nan)),
            inv_metric=inv_metric,
            config=config,
        )


class _Point:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q = q
        self.p = p
        self.logp = logp
        self.grad = grad


class _DualAveraging:
    def __init__(self, target, step_size, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


class _WindowedVariance:
    """Warmup schedule and running variance for the diagonal metric."""

    def __init__(self, warmup, dim, init_buffer=75, term_buffer=50, base_window=25):
        if init_buffer + base_window + term_buffer > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            base_window = warmup - (init_buffer + term_buffer)
        self.warmup = warmup
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_size = base_window
        self.counter = 0
        self.next_window_end = init_buffer + base_window - 1
        self._restart(dim)

    def _restart(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def _in_window(self):
        return self.init_buffer <= self.counter < self.warmup - self.term_buffer

    def add(self, q):
        """Record a warmup draw; return a new inverse metric at a window end."""
        new_metric = None
        if self._in_window():
            self.n += 1
            delta = q - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (q - self.mean)
            if self.counter == self.next_window_end:
                var = self.m2 / (self.n - 1) if self.n > 1 else np.ones_like(self.mean)
                n = self.n
                new_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                self._restart(q.size)
                self._advance_window()
        self.counter += 1
        return new_metric

    def _advance_window(self):
        last = self.warmup - self.term_buffer
        self.window_size *= 2
        self.next_window_end = self.counter + self.window_size
        if self.next_window_end + 2 * self.window_size >= last:
            self.next_window_end = last - 1


class _NutsChain:
    def __init__(self, target, dim, rng, max_depth, inv_metric=None):
        self.target = target
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(dim) if inv_metric is None else inv_metric
        self.step_size = 1.0

    def evaluate(self, q):
        try:
            logp, grad = self.target(q)
        except FloatingPointError:
            return -math.inf, None
        if not math.isfinite(logp) or not np.all(np.isfinite(grad)):
            return -math.inf, None
        return logp, grad

    def hamiltonian(self, z):
        if z.grad is None:
            return math.inf
        return -z.logp + 0.5 * float(np.dot(z.p, self.inv_metric * z.p))

    def leapfrog(self, z, eps):
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        logp, grad = self.evaluate(q)
        if grad is None:
            return _Point(q, p, logp, None)
        return _Point(q, p + 0.5 * eps * grad, logp, grad)

    def sample_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def init_step_size(self, z):
        """Double or halve the step until one-step acceptance crosses 0.8."""
        log_target = math.log(0.8)
        z0 = _Point(z.q, self.sample_momentum(), z.logp, z.grad)
        h0 = self.hamiltonian(z0)
        delta = h0 - self.hamiltonian(self.leapfrog(z0, self.step_size))
        direction = 1 if delta > log_target else -1
        for _ in range(100):
            z0 = _Point(z.q, self.sample_momentum(), z.logp, z.grad)
            h0 = self.hamiltonian(z0)
            delta = h0 - self.hamiltonian(self.leapfrog(z0, self.step_size))
            if direction == 1 and not delta > log_target:
                break
            if direction == -1 and not delta < log_target:
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size * 0.5
            if self.step_size > 1e7 or self.step_size == 0.0:
                raise SamplerError(f"step size search failed (step size {self.step_size:g})")

    def _criterion(self, p_sharp_minus, p_sharp_plus, rho):
        return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0

    def build_tree(self, depth, z, sign, h0, acc):
        """Extend the trajectory from ``z`` by ``2**depth`` leapfrog steps.

        Returns ``(valid, z_end, z_propose, log_weight, rho, p_beg, ps_beg, p_end, ps_end)``.
        ``acc`` collects the leapfrog count, the summed Metropolis
        probabilities and the divergence flag.
        """
        if depth == 0:
            z_new = self.leapfrog(z, sign * self.step_size)
            acc[0] += 1
            h = self.hamiltonian(z_new)
            if math.isnan(h):
                h = math.inf
            if h - h0 > _MAX_DELTA_H:
                acc[2] = True
            log_w = h0 - h
            acc[1] += 1.0 if log_w > 0 else math.exp(log_w)
            ps = self.inv_metric * z_new.p
            return (not acc[2], z_new, z_new, log_w, z_new.p.copy(), z_new.p, ps, z_new.p, ps)

        init = self.build_tree(depth - 1, z, sign, h0, acc)
        if not init[0]:
            return init
        _, z_mid, prop_init, lw_init, rho_init, p_beg, ps_beg, p_init_end, ps_init_end = init
        final = self.build_tree(depth - 1, z_mid, sign, h0, acc)
        if not final[0]:
            return final
        _, z_end, prop_final, lw_final, rho_final, p_final_beg, ps_final_beg, p_end, ps_end = final

        lw_subtree = np.logaddexp(lw_init, lw_final)
        if self.rng.random() < math.exp(lw_final - lw_subtree):
            z_propose = prop_final
        else:
            z_propose = prop_init
        rho = rho_init + rho_final
        persist = self._criterion(ps_beg, ps_end, rho)
        persist = persist and self._criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist = persist and self._criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, z_end, z_propose, lw_subtree, rho, p_beg, ps_beg, p_end, ps_end)

    def transition(self, z):
        """One NUTS iteration from ``z``; returns the new point and statistics."""
        z = _Point(z.q, self.sample_momentum(), z.logp, z.grad)
        h0 = self.hamiltonian(z)
        ps0 = self.inv_metric * z.p
        z_fwd = z_bwd = z
        z_sample = z
        p_fwd_fwd = p_fwd_bwd = p_bwd_fwd = p_bwd_bwd = z.p
        ps_fwd_fwd = ps_fwd_bwd = ps_bwd_fwd = ps_bwd_bwd = ps0
        rho = z.p.copy()
        log_sum_weight = 0.0
        acc = [0, 0.0, False]
        depth = 0
        while depth < self.max_depth:
            if self.rng.random() > 0.5:
                rho_bwd = rho
                p_bwd_fwd, ps_bwd_fwd = p_fwd_fwd, ps_fwd_fwd
                valid, z_fwd, z_prop, lw_sub, rho_fwd, p_fwd_bwd, ps_fwd_bwd, p_fwd_fwd, ps_fwd_fwd = (
                    self.build_tree(depth, z_fwd, 1, h0, acc)
                )
            else:
                rho_fwd = rho
                p_fwd_bwd, ps_fwd_bwd = p_bwd_bwd, ps_bwd_bwd
                valid, z_bwd, z_prop, lw_sub, rho_bwd, p_bwd_fwd, ps_bwd_fwd, p_bwd_bwd, ps_bwd_bwd = (
                    self.build_tree(depth, z_bwd, -1, h0, acc)
                )
            if not valid:
                break
            depth += 1
            if lw_sub > log_sum_weight:
                z_sample = z_prop
            elif self.rng.random() < math.exp(lw_sub - log_sum_weight):
                z_sample = z_prop
            log_sum_weight = np.logaddexp(log_sum_weight, lw_sub)
            rho = rho_bwd + rho_fwd
            persist = self._criterion(ps_bwd_bwd, ps_fwd_fwd, rho)
            persist = persist and self._criterion(ps_bwd_bwd, ps_fwd_bwd, rho_bwd + p_fwd_bwd)
            persist = persist and self._criterion(ps_bwd_fwd, ps_fwd_fwd, rho_fwd + p_bwd_fwd)
            if not persist:
                break
        n_leapfrog, sum_prob, divergent = acc
        accept = sum_prob / n_leapfrog if n_leapfrog else 0.0
        energy = self.hamiltonian(_Point(z_sample.q, z_sample.p, z_sample.logp, z_sample.grad))
        return z_sample, accept, depth, n_leapfrog, divergent, energy


def leapfrog_trajectory(target, q, p, step_size, n_steps, inv_metric=None):
    """Hamiltonian along a plain leapfrog trajectory (for integrator checks)."""
    q = np.asarray(q, dtype=float)
    chain = _NutsChain(target, q.size, None, 1, inv_metric)
    logp, grad = chain.evaluate(q)
    z = _Point(q, np.asarray(p, dtype=float), logp, grad)
    energies = [chain.hamiltonian(z)]
    for _ in range(n_steps):
        z = chain.leapfrog(z, step_size)
        energies.append(chain.hamiltonian(z))
    return np.array(energies)


def _initial_point(chain, init, jitter, rng):
    for _ in range(100):
        q = init + rng.uniform(-jitter, jitter, size=init.size) if jitter > 0 else init.copy()
        logp, grad = chain.evaluate(q)
        if grad is not None:
            return _Point(q, np.zeros_like(q), logp, grad)
    raise SamplerError("could not find a finite starting point in 100 jittered attempts")


def _run_chain(target, config, init, chain_id):
    rng = np.random.default_rng(config.seed + chain_id)
    dim = init.size
    chain = _NutsChain(target, dim, rng, config.max_tree_depth)
    z = _initial_point(chain, init, config.init_jitter, rng)
    chain.init_step_size(z)
    dual = _DualAveraging(config.target_accept, chain.step_size)
    windows = _WindowedVariance(config.warmup, dim)
    warm_div = 0
    for _ in range(config.warmup):
        z, accept, _, _, divergent, _ = chain.transition(z)
        warm_div += divergent
        chain.step_size = dual.update(accept)
        new_metric = windows.add(z.q)
        if new_metric is not None:
            chain.inv_metric = new_metric
            chain.init_step_size(z)
            dual.restart(chain.step_size)
    if warm_div == config.warmup:
        raise SamplerError(f"chain {chain_id}: every warmup transition diverged")
    chain.step_size = dual.final()
    n = config.samples
    out = {
        "values": np.empty((n, dim)),
        "log_density": np.empty(n),
        "accept_stat": np.empty(n),
        "step_size": np.full(n, chain.step_size),
        "tree_depth": np.empty(n, dtype=int),
        "n_leapfrog": np.empty(n, dtype=int),
        "divergent": np.empty(n, dtype=bool),
        "energy": np.empty(n),
    }
    for i in range(n):
        z, accept, depth, n_leap, divergent, energy = chain.transition(z)
        out["values"][i] = z.q
        out["log_density"][i] = z.logp
        out["accept_stat"][i] = accept
        out["tree_depth"][i] = depth
        out["n_leapfrog"][i] = n_leap
        out["divergent"][i] = divergent
        out["energy"][i] = energy
    out["inv_metric"] = chain.inv_metric
    out["warmup_divergences"] = warm_div
    return out


def nuts_sample(target, config, init, names=None):
    """Run ``config.chains`` independent NUTS chains.

    Parameters
    ----------
    target : callable
        ``target(q) -> (log_density, gradient)``; must be safe to call from
        several workers.
    config : SamplerConfig
    init : array_like, shape (dim,)
        Centre of the uniform jitter used for starting points.
    names : list of str, optional
        Parameter labels; defaults to ``q[0]``, ``q[1]``, ...

    Returns
    -------
    PosteriorDraws
        Chain ``k`` is seeded with ``config.seed + k`` and results are merged
        in chain order, so output does not depend on ``n_jobs``.
    """
    init = np.asarray(init, dtype=float)
    names = list(names) if names is not None else [f"q[{j}]" for j in range(init.size)]
    if len(names) != init.size:
        raise ValueError("names and init differ in length")
    if config.n_jobs == 1 or config.chains == 1:
        results = [_run_chain(target, config, init, k) for k in range(config.chains)]
    else:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_chain)(target, config, init, k) for k in range(config.chains)
        )
    stack = {key: np.stack([r[key] for r in results]) for key in results[0]}
    cfg = asdict(config)
    return PosteriorDraws(
        names=names,
        values=stack["values"],
        log_density=stack["log_density"],
        accept_stat=stack["accept_stat"],
        step_size=stack["step_size"],
        tree_depth=stack["tree_depth"],
        n_leapfrog=stack["n_leapfrog"],
        divergent=stack["divergent"],
        energy=stack["energy"],
        inv_metric=stack["inv_metric"],
        warmup_divergences=stack["warmup_divergences"],
        config=cfg,
    )
