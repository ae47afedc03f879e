"""Train a diagonal-Gaussian posterior to minimise the total-risk bound.

One gradient step draws a single parameter sample by the pathwise
reparameterisation theta = w + eps * sqrt(s), evaluates the soft empirical
risk vector and the deviation budget, and chains the envelope gradients of
the constrained kl-inverse through the Jacobians of (risks, budget) with
respect to the unconstrained parameters (w, log s). No autodiff: the
reference model is affine-softmax with analytic Jacobians, and a
finite-difference mode cross-checks them.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from riskcert.certificates import (
    BoundCertificate,
    PacBayesInputs,
    build_certificate,
    log_bound_constant,
    resolve_constant_mode,
)
from riskcert.errors import NonFiniteGradientError
from riskcert.klinverse import kl_inverse_total
from riskcert.simplex import LossVector, SimplexVector


def gaussian_kl(q: "GaussianPosterior", p: "PriorSpec") -> float:
    """Closed-form KL between diagonal Gaussians.

    (1/2) * [sum_n (s_n/r_n + (w_n - v_n)^2/r_n + ln(r_n/s_n)) - N]
    with posterior (w, s = exp zeta) and prior (v, r). Zero iff q == p.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(f"dimension mismatch: {q.mean.shape} vs {p.mean.shape}")
    if np.any(p.var <= 0.0):
        raise ValueError("prior variances must be strictly positive")
    s = np.exp(q.log_var)
    terms = s / p.var + (q.mean - p.mean) ** 2 / p.var + np.log(p.var) - q.log_var - 1.0
    return float(0.5 * np.sum(terms))


@dataclass(frozen=True)
class GaussianPosterior:
    """Diagonal Gaussian over model parameters, scale kept as log-variance."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        log_var = np.asarray(self.log_var, dtype=float)
        if mean.shape != log_var.shape or mean.ndim != 1:
            raise ValueError("mean and log_var must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise ValueError("posterior parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @property
    def n_params(self) -> int:
        return self.mean.shape[0]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)


@dataclass(frozen=True)
class PriorSpec:
    """Reference Gaussian; provenance records how its parameters were chosen."""

    mean: np.ndarray
    var: np.ndarray
    provenance: str = "fixed"

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and var must be 1-d arrays of equal length")
        if np.any(var <= 0.0) or not np.all(np.isfinite(var)):
            raise ValueError("prior variances must be finite and > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)


def pathwise_sample(q: GaussianPosterior, eps: np.ndarray) -> np.ndarray:
    """theta = w + eps * sqrt(s): deterministic given (q, eps)."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != q.mean.shape:
        raise ValueError(f"eps shape {eps.shape} does not match {q.mean.shape}")
    return q.mean + eps * np.exp(0.5 * q.log_var)


@dataclass(frozen=True)
class LabelledDataset:
    """Feature rows with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must be 1-d with one entry per feature row")
        if features.shape[0] == 0:
            raise ValueError("dataset is empty")
        if labels.min() < 0:
            raise ValueError("labels must be nonnegative class indices")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "LabelledDataset":
        return LabelledDataset(self.features[idx], self.labels[idx])

    @classmethod
    def from_csv(cls, path: str) -> "LabelledDataset":
        """Load rows of feature columns followed by an integer label column.

        A header line is required and skipped.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file, expected a header line") from None
            if len(header) < 2:
                raise ValueError(f"{path}: need at least one feature column and a label column")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ValueError(f"{path}: no data rows after the header")
        data = np.array(rows, dtype=float)
        labels = data[:, -1]
        if np.any(labels != np.round(labels)):
            raise ValueError(f"{path}: label column must contain integers")
        return cls(data[:, :-1], labels.astype(int))


class ErrorPartition:
    """Total map from (predicted, true) label pairs to error-type indices.

    ``table[pred, true]`` gives the type index; ``losses`` weights the types.
    Every type index in [0, M) must be used by at least one cell.
    """

    def __init__(self, table: np.ndarray, losses: LossVector):
        table = np.asarray(table, dtype=int)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise ValueError("partition table must be square (n_classes x n_classes)")
        M = losses.dim
        if table.min() < 0 or table.max() >= M:
            raise ValueError(f"type indices must lie in [0, {M}), got range "
                             f"[{table.min()}, {table.max()}]")
        if len(np.unique(table)) != M:
            raise ValueError(f"every type index in [0, {M}) must appear in the table")
        self.table = table
        self.losses = losses
        # onehot[y, a, j] = 1 when predicting a on true label y incurs type j
        self.onehot = np.zeros((table.shape[0], table.shape[0], M))
        for a in range(table.shape[0]):
            for y in range(table.shape[0]):
                self.onehot[y, a, table[a, y]] = 1.0

    @property
    def n_classes(self) -> int:
        return self.table.shape[0]

    @property
    def n_types(self) -> int:
        return self.losses.dim

    @classmethod
    def coarse(cls, n_classes: int, losses: LossVector | None = None) -> "ErrorPartition":
        """Two types: 0 for correct classification, 1 for incorrect."""
        if losses is None:
            losses = LossVector((0.0, 1.0))
        table = np.ones((n_classes, n_classes), dtype=int)
        np.fill_diagonal(table, 0)
        return cls(table, losses)

    @classmethod
    def fully_refined(
        cls, n_classes: int, losses: LossVector
    ) -> "ErrorPartition":
        """One type per cell: (pred, true) maps to pred * n_classes + true."""
        pred, true = np.meshgrid(
            np.arange(n_classes), np.arange(n_classes), indexing="ij"
        )
        return cls(pred * n_classes + true, losses)

    @classmethod
    def from_dict(cls, doc: dict) -> "ErrorPartition":
        """Build from the declarative JSON config format.

        Keys: "classes" (int), "losses" (list), "rules" (list of
        {"cells": "diagonal" | "off_diagonal" | [[pred, true], ...],
         "type": int}). Rules apply in order, later rules overriding earlier
        ones; every cell must end up assigned.
        """
        C = int(doc["classes"])
        losses = LossVector(tuple(doc["losses"]))
        table = np.full((C, C), -1, dtype=int)
        for rule in doc["rules"]:
            j = int(rule["type"])
            cells = rule["cells"]
            if cells == "diagonal":
                np.fill_diagonal(table, j)
            elif cells == "off_diagonal":
                mask = ~np.eye(C, dtype=bool)
                table[mask] = j
            else:
                for pred, true in cells:
                    table[int(pred), int(true)] = j
        if table.min() < 0:
            missing = np.argwhere(table < 0)
            raise ValueError(f"partition rules leave cells unassigned: {missing.tolist()}")
        return cls(table, losses)


class AffineSoftmaxModel:
    """Soft classifier: softmax of an affine map, with analytic Jacobians.

    Parameters are the flattened weight matrix (row-major, one row per class)
    followed by the bias vector.
    """

    def __init__(self, n_features: int, n_classes: int):
        if n_features < 1 or n_classes < 2:
            raise ValueError("need n_features >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.n_classes = n_classes
        self.n_params = n_classes * (n_features + 1)

    def _unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta must have shape ({self.n_params},), got {theta.shape}")
        split = self.n_classes * self.n_features
        W = theta[:split].reshape(self.n_classes, self.n_features)
        b = theta[split:]
        return W, b

    def predict_proba(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self._unpack(theta)
        Z = X @ W.T + b
        Z = Z - Z.max(axis=1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=1, keepdims=True)

    def proba_jacobian(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        """d softmax_a / d theta_n for each row: shape (rows, classes, n_params)."""
        P = self.predict_proba(theta, X)
        n, C = P.shape
        # D[i, a, e] = P[i, a] * (delta_ae - P[i, e])
        D = P[:, :, None] * (np.eye(C)[None, :, :] - P[:, None, :])
        JW = np.einsum("iae,if->iaef", D, X).reshape(n, C, C * self.n_features)
        return np.concatenate([JW, D], axis=2)


def affine_softmax_forward(theta: Sequence[float], x: Sequence[float]) -> np.ndarray:
    """Class probabilities of the affine-softmax model on one input.

    The class count is inferred from the parameter and feature lengths.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if theta.shape[0] % (d + 1) != 0:
        raise ValueError(
            f"parameter length {theta.shape[0]} is not a multiple of n_features+1={d + 1}"
        )
    C = theta.shape[0] // (d + 1)
    model = AffineSoftmaxModel(d, C)
    return model.predict_proba(theta, x[None, :])[0]


def soft_risk_vector(
    model, theta: np.ndarray, data: LabelledDataset, part: ErrorPartition
) -> SimplexVector:
    """Mean probability mass the model assigns to each error type on the sample."""
    if data.labels.max() >= part.n_classes:
        raise ValueError("dataset labels exceed the partition's class count")
    probs = model.predict_proba(theta, data.features)
    M = part.n_types
    u = np.zeros(M)
    for y in range(part.n_classes):
        rows = data.labels == y
        if not rows.any():
            continue
        mass = probs[rows].sum(axis=0)
        u += np.bincount(part.table[:, y], weights=mass, minlength=M)
    u /= data.size
    return SimplexVector(tuple(u))


def risk_jacobian(
    model, theta: np.ndarray, data: LabelledDataset, part: ErrorPartition
) -> np.ndarray:
    """d u_j / d theta_n, shape (n_types, n_params), via the model's analytic Jacobian."""
    J = model.proba_jacobian(theta, data.features)
    R = part.onehot[data.labels]  # (rows, classes, types)
    return np.einsum("iam,ian->mn", R, J) / data.size


@dataclass(frozen=True)
class PriorPolicy:
    """How the prior is chosen.

    "standard": zero mean, fixed variance, no data. "trained": means fit by
    plain total-risk minimisation on the prior split, variances fixed.
    """

    kind: str = "standard"
    var: float = 1.0
    epochs: int = 100
    learning_rate: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("standard", "trained"):
            raise ValueError(f"unknown prior policy {self.kind!r}")
        if not (self.var > 0.0):
            raise ValueError("prior variance must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the bound-minimisation loop."""

    epochs: int
    learning_rate: float
    delta: float = 0.05
    constant_mode: str = "stirling"
    seed: int = 0
    split_fraction: float = 0.2
    gradient_mode: str = "analytic"
    fd_step: float = 1e-6
    batch_size: int | None = None
    boundary_policy: str = "skip"
    smoothing_alpha: float = 1.0
    kl_tol: float = 1e-12
    risk_samples: int = 1
    certificate_samples: int = 1
    init_mean: tuple[float, ...] | None = None
    init_log_var: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.gradient_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.boundary_policy not in ("skip", "smooth"):
            raise ValueError(f"unknown boundary policy {self.boundary_policy!r}")
        if self.risk_samples < 1 or self.certificate_samples < 1:
            raise ValueError("sample counts must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known - {"prior"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in doc.items() if k in known}
        for key in ("init_mean", "init_log_var"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(float(x) for x in kwargs[key])
        return cls(**kwargs)


@dataclass
class TrainState:
    """Mutable loop state: concatenated (w, zeta) plus per-run constants."""

    params: np.ndarray
    model: AffineSoftmaxModel
    partition: ErrorPartition
    prior: PriorSpec
    m_bound: int
    log_constant: float
    rng: np.random.Generator
    n_params: int

    @property
    def posterior(self) -> GaussianPosterior:
        N = self.n_params
        return GaussianPosterior(self.params[:N].copy(), self.params[N:].copy())


def _budget_and_grad(
    state: TrainState, config: TrainConfig
) -> tuple[float, float, np.ndarray]:
    """Budget B, its KL term, and dB/d(w, zeta)."""
    post = state.posterior
    kl_qp = gaussian_kl(post, state.prior)
    B = (kl_qp + state.log_constant - math.log(config.delta)) / state.m_bound
    s = np.exp(post.log_var)
    d_w = (post.mean - state.prior.mean) / state.prior.var / state.m_bound
    d_zeta = 0.5 * (s / state.prior.var - 1.0) / state.m_bound
    return B, kl_qp, np.concatenate([d_w, d_zeta])


def _risk_and_grad(
    state: TrainState, batch: LabelledDataset, eps: np.ndarray, config: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Empirical risk vector and its Jacobian w.r.t. (w, zeta) at fixed eps."""
    N = state.n_params
    w, zeta = state.params[:N], state.params[N:]
    scale = np.exp(0.5 * zeta)
    theta = w + eps * scale
    u = soft_risk_vector(state.model, theta, batch, state.partition).as_array()
    if config.gradient_mode == "analytic":
        J_theta = risk_jacobian(state.model, theta, batch, state.partition)  # (M, N)
        G_w = J_theta.T  # d theta / d w = identity
        G_zeta = J_theta.T * (0.5 * eps * scale)[:, None]
        return u, np.concatenate([G_w, G_zeta], axis=0)  # (2N, M)
    # Central finite differences over the packed parameters, eps held fixed.
    h = config.fd_step
    M = state.partition.n_types
    G = np.zeros((2 * N, M))
    for i in range(2 * N):
        for sign in (1.0, -1.0):
            p = state.params.copy()
            p[i] += sign * h
            th = p[:N] + eps * np.exp(0.5 * p[N:])
            ui = soft_risk_vector(state.model, th, batch, state.partition).as_array()
            G[i] += sign * ui / (2.0 * h)
    return u, G


def training_step(
    state: TrainState, batch: LabelledDataset, config: TrainConfig
) -> tuple[TrainState, dict]:
    """One loop body; mutates ``state.params`` in place and returns diagnostics."""
    N = state.n_params
    eps_draws = [state.rng.standard_normal(N) for _ in range(config.risk_samples)]
    u = np.zeros(state.partition.n_types)
    G_risk = np.zeros((2 * N, state.partition.n_types))
    for eps in eps_draws:
        ui, Gi = _risk_and_grad(state, batch, eps, config)
        u += ui / config.risk_samples
        G_risk += Gi / config.risk_samples

    diagnostics: dict = {"skipped": False}
    if np.any(u == 0.0):
        if config.boundary_policy == "skip":
            warnings.warn(
                "risk vector on the simplex boundary; skipping gradient step",
                RuntimeWarning,
                stacklevel=2,
            )
            B, kl_qp, _ = _budget_and_grad(state, config)
            diagnostics.update(
                skipped=True,
                empirical_risk=u.tolist(),
                budget_nats=B,
                kl_qp=kl_qp,
                total_risk_bound=None,
                grad_norm=0.0,
            )
            return state, diagnostics
        n = batch.size
        alpha = config.smoothing_alpha
        M = state.partition.n_types
        G_risk *= n / (n + M * alpha)
        u = (u * n + alpha) / (n + M * alpha)

    B, kl_qp, dB = _budget_and_grad(state, config)
    sol = kl_inverse_total(
        SimplexVector(tuple(u)), B, state.partition.losses, config.kl_tol
    )
    F = np.array([*sol.grad_u, sol.grad_c])
    G = np.concatenate([G_risk, dB[:, None]], axis=1)  # (2N, M+1)
    H = G @ F
    if not np.all(np.isfinite(H)):
        raise NonFiniteGradientError(
            f"non-finite gradient: |H| has nan/inf; u={u.tolist()}, B={B}, "
            f"lambda*={sol.lambda_star}"
        )
    state.params = state.params - config.learning_rate * H
    diagnostics.update(
        empirical_risk=u.tolist(),
        budget_nats=B,
        kl_qp=kl_qp,
        total_risk_bound=sol.f_star,
        grad_norm=float(np.linalg.norm(H)),
        kl_inverse_residual=sol.residual,
    )
    return state, diagnostics


def _train_prior_mean(
    model: AffineSoftmaxModel,
    data: LabelledDataset,
    part: ErrorPartition,
    policy: PriorPolicy,
) -> np.ndarray:
    """Plain deterministic total-risk minimisation of the model parameters."""
    theta = np.zeros(model.n_params)
    loss = part.losses.as_array()
    for _ in range(policy.epochs):
        grad = risk_jacobian(model, theta, data, part).T @ loss
        theta = theta - policy.learning_rate * grad
    return theta


@dataclass(frozen=True)
class TrainResult:
    posterior: GaussianPosterior
    prior: PriorSpec
    certificate: BoundCertificate
    history: tuple[dict, ...]


def train(
    dataset: LabelledDataset,
    part: ErrorPartition,
    prior_policy: PriorPolicy,
    config: TrainConfig,
    model: AffineSoftmaxModel | None = None,
) -> TrainResult:
    """Run the bound-minimisation loop and certify the final posterior.

    With a trained prior the sample is split once: the prior sees only the
    prior split, while the certificate's m counts only the bound split. The
    posterior itself trains on the full sample. A standard (data-free) prior
    needs no isolation, so the whole sample serves as the bound split.
    """
    if dataset.labels.max() >= part.n_classes:
        raise ValueError("dataset labels exceed the partition's class count")
    if model is None:
        model = AffineSoftmaxModel(dataset.n_features, part.n_classes)

    ss = np.random.SeedSequence(config.seed)
    split_seed, step_seed, cert_seed = ss.spawn(3)

    if prior_policy.kind == "trained":
        if not (0.0 < config.split_fraction < 1.0):
            raise ValueError("trained prior requires split_fraction in (0, 1)")
        n_prior = int(round(config.split_fraction * dataset.size))
        if n_prior < 1 or n_prior >= dataset.size:
            raise ValueError(f"degenerate split: {n_prior} prior rows of {dataset.size}")
        perm = np.random.default_rng(split_seed).permutation(dataset.size)
        prior_rows = np.sort(perm[:n_prior])
        bound_rows = np.sort(perm[n_prior:])
        prior_data = dataset.subset(prior_rows)
        bound_data = dataset.subset(bound_rows)
        prior_mean = _train_prior_mean(model, prior_data, part, prior_policy)
        prior = PriorSpec(
            prior_mean,
            np.full(model.n_params, prior_policy.var),
            provenance="trained-on-prior-split",
        )
    else:
        bound_data = dataset
        prior = PriorSpec(
            np.zeros(model.n_params),
            np.full(model.n_params, prior_policy.var),
            provenance="fixed",
        )

    N = model.n_params
    w0 = (
        np.array(config.init_mean, dtype=float)
        if config.init_mean is not None
        else prior.mean.copy()
    )
    zeta0 = (
        np.array(config.init_log_var, dtype=float)
        if config.init_log_var is not None
        else np.log(prior.var)
    )
    if w0.shape != (N,) or zeta0.shape != (N,):
        raise ValueError(f"initial posterior parameters must have shape ({N},)")

    mode = resolve_constant_mode(bound_data.size, part.n_types, config.constant_mode)
    log_constant = log_bound_constant(bound_data.size, part.n_types, mode)

    state = TrainState(
        params=np.concatenate([w0, zeta0]),
        model=model,
        partition=part,
        prior=prior,
        m_bound=bound_data.size,
        log_constant=log_constant,
        rng=np.random.default_rng(step_seed),
        n_params=N,
    )

    history: list[dict] = []
    for epoch in range(config.epochs):
        diag: dict = {}
        if config.batch_size is None:
            state, diag = training_step(state, dataset, config)
        else:
            order = state.rng.permutation(dataset.size)
            for start in range(0, dataset.size, config.batch_size):
                batch = dataset.subset(order[start : start + config.batch_size])
                state, diag = training_step(state, batch, config)
        history.append({"epoch": epoch, **diag})

    posterior = state.posterior
    cert_rng = np.random.default_rng(cert_seed)
    u_cert = np.zeros(part.n_types)
    for _ in range(config.certificate_samples):
        theta = pathwise_sample(posterior, cert_rng.standard_normal(N))
        u_cert += (
            soft_risk_vector(model, theta, bound_data, part).as_array()
            / config.certificate_samples
        )
    risk = SimplexVector(tuple(u_cert))
    smoothing = None
    if config.boundary_policy == "smooth" and not risk.is_interior():
        smoothing = config.smoothing_alpha
    inputs = PacBayesInputs(
        m=bound_data.size,
        M=part.n_types,
        delta=config.delta,
        kl_qp=gaussian_kl(posterior, prior),
        empirical_risk=risk,
    )
    certificate = build_certificate(
        inputs,
        mode=mode,
        losses=part.losses,
        smoothing_alpha=smoothing,
        tol=config.kl_tol,
    )
    return TrainResult(
        posterior=posterior,
        prior=prior,
        certificate=certificate,
        history=tuple(history),
    )
