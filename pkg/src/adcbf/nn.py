"""Small dense networks with analytic weight Jacobians.

Networks are evaluated layer by layer from a single flat weight vector, so
the same code path serves both prediction and the regressor matrix needed by
the adaptation law.  Each layer transition feeds an augmented vector (the
activated values with a trailing constant-1 bias slot) through one weight
matrix; when the transition's shortcut flag is set, a parallel second matrix
on the same augmented vector is added, which doubles that transition's
weight count and is what gives the shortcut architectures their parameter
totals.  Keeping both paths behind the bounded activation keeps outputs and
regressors moderate under wide random weight initializations.  All
activations are smooth so the Jacobian with respect to the weights is
everywhere defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatchError(ValueError):
    """Raised when an input or weight vector does not fit the architecture."""


_SUPPORTED_ACTIVATIONS = ("tanh", "swish", "identity")


def _scalar_activation(tag: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if tag == "tanh":
        v = np.tanh(z)
        return v, 1.0 - v * v
    if tag == "swish":
        s = 1.0 / (1.0 + np.exp(-z))
        return z * s, s * (1.0 + z * (1.0 - s))
    if tag == "identity":
        return z.copy(), np.ones_like(z)
    raise ValueError(f"unknown activation tag {tag!r}; expected one of {_SUPPORTED_ACTIVATIONS}")


def activation_eval(tag: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate an activation layer on a bias-augmented vector.

    The last component of ``z`` is the bias-propagation slot: its value maps
    to exactly 1 with derivative 0, regardless of the input.  Returns the
    activated values and the diagonal of the layer Jacobian.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise DimensionMismatchError("activation input must be a nonempty 1-d vector")
    vals, ders = _scalar_activation(tag, z)
    vals[-1] = 1.0
    ders[-1] = 0.0
    return vals, ders


@dataclass(frozen=True)
class DnnArchitecture:
    """Layer topology of a fully connected network with optional shortcuts.

    ``hidden_widths`` counts real neurons per hidden layer; the bias slot is
    appended internally.  ``activations`` holds one tag per hidden layer and
    ``shortcuts`` one flag per layer transition (there are ``k + 1``
    transitions for ``k`` hidden layers).  A shortcut transition carries a
    second weight matrix on the pre-activation values, doubling that
    transition's parameter count.
    """

    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...] = ()
    activations: tuple[str, ...] = ()
    shortcuts: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise DimensionMismatchError("input_dim and output_dim must be positive")
        k = len(self.hidden_widths)
        if len(self.activations) != k:
            raise DimensionMismatchError(
                f"expected {k} activation tags (one per hidden layer), got {len(self.activations)}"
            )
        if len(self.shortcuts) != k + 1:
            raise DimensionMismatchError(
                f"expected {k + 1} shortcut flags (one per transition), got {len(self.shortcuts)}"
            )
        for tag in self.activations:
            if tag not in _SUPPORTED_ACTIVATIONS:
                raise ValueError(f"unknown activation tag {tag!r}")
        if any(w < 1 for w in self.hidden_widths):
            raise DimensionMismatchError("hidden layer widths must be positive")
        widths = (self.input_dim, *self.hidden_widths, self.output_dim)
        shapes, slices, off = [], [], 0
        for j in range(k + 1):
            d = (widths[j] + 1) * (2 if self.shortcuts[j] else 1)
            w = widths[j + 1]
            shapes.append((d, w))
            slices.append(slice(off, off + d * w))
            off += d * w
        object.__setattr__(self, "_widths", widths)
        object.__setattr__(self, "_shapes", tuple(shapes))
        object.__setattr__(self, "_slices", tuple(slices))
        object.__setattr__(self, "_param_count", off)

    @property
    def num_hidden(self) -> int:
        return len(self.hidden_widths)

    @property
    def layer_widths(self) -> tuple[int, ...]:
        """Neuron count entering each transition, input first, output last."""
        return self._widths

    def feed_dim(self, j: int) -> int:
        """Length of the augmented vector feeding transition ``j``."""
        return self._shapes[j][0]

    def matrix_shape(self, j: int) -> tuple[int, int]:
        return self._shapes[j]

    @property
    def param_count(self) -> int:
        return self._param_count

    @property
    def slices(self) -> tuple[slice, ...]:
        """Column-major flat-vector slice for each transition matrix."""
        return self._slices


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Flat weight vector bound to an architecture.

    Matrices are vectorized column by column (row index fastest), so the
    Kronecker-structured Jacobian blocks line up with plain reshapes.
    """

    arch: DnnArchitecture
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.size != self.arch.param_count:
            raise DimensionMismatchError(
                f"weight vector has {theta.size} entries, architecture needs {self.arch.param_count}"
            )
        object.__setattr__(self, "theta", theta)

    def matrices(self) -> list[np.ndarray]:
        return [
            self.theta[s].reshape(self.arch.matrix_shape(j), order="F")
            for j, s in enumerate(self.arch.slices)
        ]

    @classmethod
    def from_matrices(cls, arch: DnnArchitecture, mats) -> "WeightVector":
        flat = []
        for j, m in enumerate(mats):
            m = np.asarray(m, dtype=float)
            if m.shape != arch.matrix_shape(j):
                raise DimensionMismatchError(
                    f"transition {j}: matrix shape {m.shape} does not match {arch.matrix_shape(j)}"
                )
            flat.append(m.flatten(order="F"))
        return cls(arch, np.concatenate(flat) if flat else np.zeros(0))

    @classmethod
    def zeros(cls, arch: DnnArchitecture) -> "WeightVector":
        return cls(arch, np.zeros(arch.param_count))

    @classmethod
    def random_normal(cls, arch: DnnArchitecture, rng: np.random.Generator, std: float) -> "WeightVector":
        return cls(arch, rng.normal(0.0, std, size=arch.param_count))


def _as_flat_theta(arch: DnnArchitecture, theta) -> np.ndarray:
    if isinstance(theta, WeightVector):
        if theta.arch is not arch and theta.arch != arch:
            raise DimensionMismatchError("weight vector bound to a different architecture")
        return theta.theta
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != arch.param_count:
        raise DimensionMismatchError(
            f"weight vector has {theta.size} entries, architecture needs {arch.param_count}"
        )
    return theta


def _feeds(arch: DnnArchitecture, theta: np.ndarray, sigma: np.ndarray):
    """Run the recursion, caching per-transition feed vectors and derivatives."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if sigma.size != arch.input_dim:
        raise DimensionMismatchError(
            f"input layer: got {sigma.size} entries, architecture expects {arch.input_dim}"
        )
    mats = [
        theta[s].reshape(arch.matrix_shape(j), order="F") for j, s in enumerate(arch.slices)
    ]
    sigma_a = np.empty(sigma.size + 1)
    sigma_a[:-1] = sigma
    sigma_a[-1] = 1.0
    feeds, act_ders = [], []
    h = None
    for j in range(arch.num_hidden + 1):
        if j == 0:
            z = np.concatenate([sigma_a, sigma_a]) if arch.shortcuts[0] else sigma_a
            der = None
        else:
            h_aug = np.empty(h.size + 1)
            h_aug[:-1] = h
            h_aug[-1] = 1.0
            vals, der = activation_eval(arch.activations[j - 1], h_aug)
            z = np.concatenate([vals, vals]) if arch.shortcuts[j] else vals
        feeds.append(z)
        act_ders.append(der)
        h = mats[j].T @ z
    return mats, feeds, act_ders, h


def forward(arch: DnnArchitecture, theta, sigma) -> np.ndarray:
    """Evaluate the network output for input ``sigma``."""
    _, _, _, out = _feeds(arch, _as_flat_theta(arch, theta), sigma)
    return out


def jacobian_weights(arch: DnnArchitecture, theta, sigma) -> np.ndarray:
    """Jacobian of the network output with respect to the flat weights.

    Columns follow the weight vector's column-major per-transition layout.
    """
    return forward_with_jacobian(arch, theta, sigma)[1]


def forward_with_jacobian(arch: DnnArchitecture, theta, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate output and weight Jacobian in one pass (shared recursion)."""
    theta = _as_flat_theta(arch, theta)
    mats, feeds, act_ders, out = _feeds(arch, theta, sigma)
    n_out = arch.output_dim
    jac = np.empty((n_out, arch.param_count))
    # Reverse sweep: J tracks d(output)/d(pre-activation of layer j+1).
    J = np.eye(n_out)
    for j in range(arch.num_hidden, -1, -1):
        z = feeds[j]
        block = (J[:, :, None] * z[None, None, :]).reshape(n_out, -1)
        jac[:, arch.slices[j]] = block
        if j > 0:
            w_prev = arch.layer_widths[j]
            W = mats[j]
            # Both paths differentiate through the activation; bias rows drop out.
            eff = W[:w_prev, :]
            if arch.shortcuts[j]:
                eff = eff + W[w_prev + 1 : 2 * w_prev + 1, :]
            J = J @ (eff.T * act_ders[j][:w_prev])
    return out, jac
