"""Numerical verification lab for the variance-dominance norm threshold.

The feature model is a mixture of isotropic Gaussians, one component per
class: class ``c`` contributes prior weight ``B_c`` times N(mean_c,
sigma_c^2 I). A backdoored feature space is characterized by the target
component carrying the largest standard deviation; in that regime a finite
radius ``M`` exists such that every feature vector with L2 norm beyond M is
density-classified into the target class. The certificate below computes M
in closed form and the simulator checks it by Monte-Carlo.

The pairwise bound comes from the density comparison between target ``t``
and class ``c``. Writing W_c = B_c / sigma_c^d for the density prefactor,
classification into t against c holds iff

    A * r^2 - 2 <b, v> + C0 >= 0,   with r = ||b||,
    A  = sigma_t^2 - sigma_c^2,
    v  = sigma_t^2 * mean_c - sigma_c^2 * mean_t,
    C0 = sigma_t^2 ||mean_c||^2 - sigma_c^2 ||mean_t||^2
         + 2 sigma_t^2 sigma_c^2 * log(W_t / W_c).

Bounding <b, v> by r * ||v|| makes this a quadratic in r with positive
leading coefficient whenever A > 0. Its larger root is the pairwise radius
M_c; a negative discriminant means the inequality holds for every radius,
which is recorded as a clamped pair with M_c = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import BnParams

__all__ = [
    "AmplificationRow",
    "GaussianMixtureHead",
    "NormThresholdCertificate",
    "certify_norm_threshold",
    "density_classify",
    "log_densities",
    "sample_features",
    "simplex_head",
    "simulate_amplification",
]


@dataclass(frozen=True)
class GaussianMixtureHead:
    """Per-class isotropic Gaussian feature components with prior weights."""

    means: np.ndarray  # [C, d]
    sigmas: np.ndarray  # [C], all > 0
    priors: np.ndarray  # [C], all > 0
    target: int

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        sigmas = np.ascontiguousarray(self.sigmas, dtype=np.float64)
        priors = np.ascontiguousarray(self.priors, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be a [classes, dim] matrix")
        classes = means.shape[0]
        if classes < 2:
            raise ValueError("need at least two classes")
        if sigmas.shape != (classes,) or priors.shape != (classes,):
            raise ValueError("sigmas and priors must hold one entry per class")
        if np.any(sigmas <= 0):
            raise ValueError("sigmas must be positive")
        if np.any(priors <= 0):
            raise ValueError("priors must be positive")
        if not 0 <= self.target < classes:
            raise ValueError(f"target must lie in [0, {classes})")
        for arr in (means, sigmas, priors):
            if not np.all(np.isfinite(arr)):
                raise ValueError("head parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "priors", priors)

    @property
    def class_count(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_weights(self) -> np.ndarray:
        """log prior minus the dimension-dependent normalization, up to a
        constant shared by all classes."""
        return np.log(self.priors) - self.dim * np.log(self.sigmas)


def simplex_head(
    classes: int,
    target: int = 0,
    target_sigma: float = 2.0,
    other_sigma: float = 1.0,
    mean_norm: float = 1.0,
) -> GaussianMixtureHead:
    """Symmetric head: equidistant one-hot-scaled means, equal priors,
    target component widened to ``target_sigma``."""
    means = np.eye(classes) * mean_norm
    sigmas = np.full(classes, float(other_sigma))
    sigmas[target] = float(target_sigma)
    return GaussianMixtureHead(
        means=means, sigmas=sigmas, priors=np.full(classes, 1.0 / classes), target=target
    )


def log_densities(head: GaussianMixtureHead, points: np.ndarray) -> np.ndarray:
    """Per-class log(prior * N(point; mean_c, sigma_c^2 I)) up to a shared
    constant; points is [n, d]."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    if points.shape[1] != head.dim:
        raise ValueError(f"points have dim {points.shape[1]}, head expects {head.dim}")
    diff = points[:, None, :] - head.means[None, :, :]  # [n, C, d]
    sq = np.sum(diff * diff, axis=2)
    return head.log_weights()[None, :] - sq / (2.0 * head.sigmas[None, :] ** 2)


def density_classify(head: GaussianMixtureHead, point: np.ndarray) -> int:
    """Class with the largest prior-weighted density; lowest index wins ties."""
    return int(np.argmax(log_densities(head, np.asarray(point, dtype=np.float64))[0]))


@dataclass(frozen=True)
class NormThresholdCertificate:
    """Radius beyond which density classification collapses to the target.

    ``pairwise`` maps each non-target class to its radius bound; ``clamped``
    lists the classes whose quadratic had no real root (bound held at every
    radius, contribution clamped to zero). ``threshold`` is infinite exactly
    when the variance-dominance condition fails.
    """

    pairwise: dict
    threshold: float
    backdoor_condition_holds: bool
    clamped: tuple

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.threshold)


def certify_norm_threshold(head: GaussianMixtureHead) -> NormThresholdCertificate:
    """Compute the pairwise quadratic-root radii and their maximum.

    Total function: a head violating sigma_t > sigma_c for some c yields an
    infinite threshold with the condition flag unset.
    """
    t = head.target
    sig = head.sigmas
    logw = head.log_weights()
    condition = bool(np.all(sig[t] > np.delete(sig, t)))

    pairwise: dict[int, float] = {}
    clamped: list[int] = []
    for c in range(head.class_count):
        if c == t:
            continue
        coeff = sig[t] ** 2 - sig[c] ** 2
        if coeff <= 0:
            pairwise[c] = math.inf
            continue
        v = sig[t] ** 2 * head.means[c] - sig[c] ** 2 * head.means[t]
        v_norm = float(np.linalg.norm(v))
        c0 = (
            sig[t] ** 2 * float(np.dot(head.means[c], head.means[c]))
            - sig[c] ** 2 * float(np.dot(head.means[t], head.means[t]))
            + 2.0 * sig[t] ** 2 * sig[c] ** 2 * float(logw[t] - logw[c])
        )
        disc = v_norm * v_norm - coeff * c0
        if disc < 0:
            # no real root: the pairwise inequality holds at every radius
            pairwise[c] = 0.0
            clamped.append(c)
        else:
            pairwise[c] = (v_norm + math.sqrt(disc)) / coeff

    threshold = max((max(m, 0.0) for m in pairwise.values()), default=math.inf)
    if not condition:
        threshold = math.inf
    return NormThresholdCertificate(
        pairwise=pairwise,
        threshold=threshold,
        backdoor_condition_holds=condition,
        clamped=tuple(clamped),
    )


def sample_features(head: GaussianMixtureHead, count: int, rng: np.random.Generator):
    """Draw (features [count, d], class labels [count]) from the mixture."""
    if count < 1:
        raise ValueError("count must be >= 1")
    priors = head.priors / head.priors.sum()
    labels = rng.choice(head.class_count, size=count, p=priors)
    noise = rng.standard_normal((count, head.dim))
    features = head.means[labels] + noise * head.sigmas[labels][:, None]
    return features, labels


@dataclass(frozen=True)
class AmplificationRow:
    amplified_stages: int
    mean_norm: float
    top_decile_target_fraction: float
    above_threshold_count: int
    above_threshold_target_fraction: float


@dataclass(frozen=True)
class SimulationResult:
    rows: tuple
    seed: int
    omega: float
    certificate: NormThresholdCertificate

    def to_csv(self) -> str:
        lines = ["k,mean_norm,top_decile_target_fraction,above_threshold_count,"
                 "above_threshold_target_fraction"]
        for r in self.rows:
            lines.append(
                f"{r.amplified_stages},{r.mean_norm!r},{r.top_decile_target_fraction!r},"
                f"{r.above_threshold_count},{r.above_threshold_target_fraction!r}"
            )
        return "\n".join(lines) + "\n"


def _bn_vector(params: BnParams, features: np.ndarray, omega: float) -> np.ndarray:
    gamma = params.gamma.astype(np.float64) * omega
    beta = params.beta.astype(np.float64) * omega
    inv = 1.0 / np.sqrt(params.running_var.astype(np.float64) + params.epsilon)
    return (features - params.running_mean.astype(np.float64)) * (gamma * inv) + beta


def simulate_amplification(
    head: GaussianMixtureHead,
    chain,
    omega: float,
    amplified_counts,
    samples: int,
    seed: int,
) -> SimulationResult:
    """Push mixture draws through (positive linear map, batch-norm) stages.

    ``chain`` is a sequence of (matrix, BnParams) stages mapping the feature
    dimension to itself; each stage's matrix must be entrywise >= 0. For
    each entry ``k`` of ``amplified_counts`` the last k stages run with
    (omega*gamma, omega*beta). Per k the result records the mean output
    norm, the fraction of the top-norm decile density-classified into the
    target, and the same fraction among outputs beyond the certified radius.
    The mixture parameters used for classification stay fixed: inference-
    time scaling never rewrites the trained feature distribution.
    """
    chain = list(chain)
    for i, (mat, params) in enumerate(chain):
        mat = np.asarray(mat, dtype=np.float64)
        if mat.shape != (head.dim, head.dim):
            raise ValueError(f"stage {i}: matrix must be [{head.dim}, {head.dim}]")
        if np.any(mat < 0):
            raise ValueError(f"stage {i}: linear map must be entrywise non-negative")
        if params.channels != head.dim:
            raise ValueError(f"stage {i}: batch-norm width must equal head dim")
        chain[i] = (mat, params)
    counts = [int(k) for k in amplified_counts]
    if not counts:
        raise ValueError("amplified_counts must be non-empty")
    if any(k < 0 or k > len(chain) for k in counts):
        raise ValueError(f"amplified_counts entries must lie in [0, {len(chain)}]")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not omega > 0:
        raise ValueError("omega must be > 0")

    rng = np.random.default_rng(seed)
    features, _ = sample_features(head, samples, rng)
    certificate = certify_norm_threshold(head)

    rows = []
    for k in counts:
        out = features
        first_amplified = len(chain) - k
        for i, (mat, params) in enumerate(chain):
            out = out @ mat.T
            out = _bn_vector(params, out, omega if i >= first_amplified else 1.0)
        norms = np.linalg.norm(out, axis=1)
        classified = np.argmax(log_densities(head, out), axis=1)
        decile = max(1, samples // 10)
        top = np.argsort(norms)[-decile:]
        above = norms > certificate.threshold
        n_above = int(above.sum())
        rows.append(
            AmplificationRow(
                amplified_stages=k,
                mean_norm=float(norms.mean()),
                top_decile_target_fraction=float(np.mean(classified[top] == head.target)),
                above_threshold_count=n_above,
                above_threshold_target_fraction=(
                    float(np.mean(classified[above] == head.target)) if n_above else math.nan
                ),
            )
        )
    return SimulationResult(rows=tuple(rows), seed=int(seed), omega=float(omega),
                            certificate=certificate)
