"""Conductivity and elasticity coefficient fields on the unit square.

Evaluators are vectorized: they take an ``(n, 2)`` array of points and return
``(n, 2, 2)`` conductivity matrices or ``(n, 3, 3)`` Voigt elasticity
matrices.

Voigt convention (used everywhere in the package): stress
``[s11, s22, s12]``, strain ``[e11, e22, 2 e12]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import TriangleMesh, build_structured

SCALAR_FAMILIES = ("constant", "diag", "laminate", "checkerboard", "inclusions", "multiscale_trig")
ELASTIC_FAMILIES = ("isotropic", "scaled_identity", "rough_isotropic")

# Mandel scaling: Voigt D -> symmetric operator on orthonormal symmetric-matrix basis
_MANDEL = np.array([1.0, 1.0, np.sqrt(2.0)])


@dataclass(frozen=True, eq=False)
class ScalarCoefficient:
    """Symmetric positive definite 2x2 matrix field ``a(x)``."""

    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lam_min: float
    lam_max: float
    family: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(points, dtype=float)))

    @property
    def contrast(self) -> float:
        return self.lam_max / self.lam_min


@dataclass(frozen=True, eq=False)
class ElasticTensorField:
    """Elasticity tensor field stored as 3x3 Voigt matrices."""

    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lam_min: float
    lam_max: float
    family: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(points, dtype=float)))

    @property
    def contrast(self) -> float:
        return self.lam_max / self.lam_min


def _iso(values: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape + (2, 2))
    out[..., 0, 0] = values
    out[..., 1, 1] = values
    return out


def _positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)


def _sampled_bounds(evaluate, n_div) -> tuple[float, float]:
    pts = build_structured(n_div).barycenters
    eig = np.linalg.eigvalsh(evaluate(pts))
    return float(eig.min()), float(eig.max())


def _trig_factor(rng, levels, amplitude):
    """Product of ``levels`` oscillating factors at dyadic scales, in (1-A)^L..(1+A)^L."""
    freqs = []
    for lvl in range(levels):
        k = 2.0 ** (lvl + 1)
        angle = rng.uniform(0, np.pi)
        freqs.append((k * np.cos(angle), k * np.sin(angle), rng.uniform(0, 2 * np.pi)))

    def factor(pts):
        out = np.ones(len(pts))
        for kx, ky, phase in freqs:
            out *= 1.0 + amplitude * np.sin(np.pi * (kx * pts[:, 0] + ky * pts[:, 1]) + phase)
        return out

    return factor


def make_scalar(family: str, **params) -> ScalarCoefficient:
    """Build a conductivity field.

    Families and parameters:

    ``constant``       alpha
    ``diag``           a1, a2
    ``laminate``       values (per layer), breaks (interior interfaces in x1);
                       ``a = diag(a1(x1), 1)``
    ``checkerboard``   kappa, cells; value 1 on even cells, kappa on odd ones
    ``inclusions``     kappa, count, radius, seed; kappa inside random discs
    ``multiscale_trig`` levels, amplitude, seed, sample_n_div; rotated
                       anisotropic field oscillating on ``levels`` dyadic scales
    """
    if family == "constant":
        alpha = _positive("alpha", params.get("alpha", 1.0))
        return ScalarCoefficient(
            lambda p: _iso(np.full(len(p), alpha)), alpha, alpha, family, {"alpha": alpha}
        )

    if family == "diag":
        a1 = _positive("a1", params["a1"])
        a2 = _positive("a2", params["a2"])

        def ev(p):
            out = np.zeros((len(p), 2, 2))
            out[:, 0, 0], out[:, 1, 1] = a1, a2
            return out

        return ScalarCoefficient(ev, min(a1, a2), max(a1, a2), family, {"a1": a1, "a2": a2})

    if family == "laminate":
        values = np.array([_positive("layer value", v) for v in params["values"]])
        breaks = np.sort(np.atleast_1d(np.asarray(params.get("breaks", []), dtype=float)))
        if len(breaks) != len(values) - 1:
            raise ValueError("laminate needs len(values) - 1 interface positions")

        def ev(p):
            out = np.zeros((len(p), 2, 2))
            out[:, 0, 0] = values[np.searchsorted(breaks, p[:, 0], side="right")]
            out[:, 1, 1] = 1.0
            return out

        lo = min(1.0, values.min())
        hi = max(1.0, values.max())
        return ScalarCoefficient(
            ev, lo, hi, family, {"values": values.tolist(), "breaks": breaks.tolist()}
        )

    if family == "checkerboard":
        kappa = _positive("kappa", params["kappa"])
        cells = int(params.get("cells", 8))

        def ev(p):
            ij = np.minimum(np.floor(p * cells).astype(int), cells - 1)
            odd = (ij[:, 0] + ij[:, 1]) % 2 == 1
            return _iso(np.where(odd, kappa, 1.0))

        return ScalarCoefficient(
            ev, min(1.0, kappa), max(1.0, kappa), family, {"kappa": kappa, "cells": cells}
        )

    if family == "inclusions":
        kappa = _positive("kappa", params["kappa"])
        count = int(params.get("count", 10))
        radius = _positive("radius", params.get("radius", 0.05))
        seed = int(params["seed"])
        rng = np.random.default_rng(seed)
        centers = rng.uniform(radius, 1 - radius, size=(count, 2))

        def ev(p):
            d2 = ((p[:, None, :] - centers[None]) ** 2).sum(-1)
            inside = (d2 <= radius**2).any(axis=1)
            return _iso(np.where(inside, kappa, 1.0))

        return ScalarCoefficient(
            ev,
            min(1.0, kappa),
            max(1.0, kappa),
            family,
            {"kappa": kappa, "count": count, "radius": radius},
            seed,
        )

    if family == "multiscale_trig":
        levels = int(params.get("levels", 5))
        amplitude = float(params.get("amplitude", 0.6))
        if not 0 <= amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1) to keep the field positive definite")
        seed = int(params["seed"])
        sample_n_div = int(params.get("sample_n_div", 128))
        rng = np.random.default_rng(seed)
        s1 = _trig_factor(rng, levels, amplitude)
        s2 = _trig_factor(rng, levels, amplitude)
        rot = _trig_factor(rng, levels, 0.5)

        def ev(p):
            e1, e2 = s1(p), s2(p)
            th = np.pi * rot(p)
            c, s = np.cos(th), np.sin(th)
            out = np.empty((len(p), 2, 2))
            out[:, 0, 0] = c * c * e1 + s * s * e2
            out[:, 1, 1] = s * s * e1 + c * c * e2
            out[:, 0, 1] = out[:, 1, 0] = c * s * (e1 - e2)
            return out

        lo, hi = _sampled_bounds(ev, sample_n_div)
        return ScalarCoefficient(
            ev,
            lo,
            hi,
            family,
            {"levels": levels, "amplitude": amplitude, "sample_n_div": sample_n_div},
            seed,
        )

    raise ValueError(f"unknown scalar family {family!r}; expected one of {SCALAR_FAMILIES}")


def isotropic_voigt(lam, mu) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(np.broadcast(lam, mu).shape + (3, 3))
    out[..., 0, 0] = out[..., 1, 1] = lam + 2 * mu
    out[..., 0, 1] = out[..., 1, 0] = lam
    out[..., 2, 2] = mu
    return out


def voigt_to_mandel(D) -> np.ndarray:
    return D * _MANDEL[:, None] * _MANDEL[None, :]


def voigt_bounds(D) -> tuple[float, float]:
    """Extreme eigenvalues of ``C`` acting on symmetric matrices (Frobenius product)."""
    eig = np.linalg.eigvalsh(voigt_to_mandel(np.asarray(D)))
    return float(eig.min()), float(eig.max())


def voigt_to_tensor(D) -> np.ndarray:
    """Full ``C_ijkl`` (last four axes) from Voigt matrices (last two axes)."""
    D = np.asarray(D)
    idx = np.array([[0, 2], [2, 1]])
    return D[..., idx[:, :, None, None], idx[None, None, :, :]]


def tensor_to_voigt(C) -> np.ndarray:
    C = np.asarray(C)
    pairs = [(0, 0), (1, 1), (0, 1)]
    out = np.empty(C.shape[:-4] + (3, 3))
    for I, (i, j) in enumerate(pairs):
        for J, (k, l) in enumerate(pairs):
            out[..., I, J] = C[..., i, j, k, l]
    return out


def identity_tensor(symmetric=False) -> np.ndarray:
    """``delta_ik delta_jl`` (or its minor-symmetrized version) as a 2x2x2x2 array."""
    d = np.eye(2)
    C = np.einsum("ik,jl->ijkl", d, d)
    if symmetric:
        C = 0.5 * (C + np.einsum("il,jk->ijkl", d, d))
    return C


def make_elastic(family: str, **params) -> ElasticTensorField:
    """Build an elasticity tensor field.

    ``isotropic``        lam, mu (numbers or callables of points)
    ``scaled_identity``  c; ``C : e = c e``
    ``rough_isotropic``  contrast, seed, cells; piecewise constant Lame
                         moduli with log-uniform shear modulus in
                         ``[1, contrast]`` and ``lam = mu``
    """
    if family == "isotropic":
        lam, mu = params["lam"], params["mu"]
        if callable(lam) or callable(mu):
            lam_f = lam if callable(lam) else (lambda p, v=float(lam): np.full(len(p), v))
            mu_f = mu if callable(mu) else (lambda p, v=float(mu): np.full(len(p), v))
            sample = build_structured(int(params.get("sample_n_div", 64))).barycenters
            lv, mv = lam_f(sample), mu_f(sample)
            if np.any(mv <= 0) or np.any(lv + mv <= 0):
                raise ValueError("Lame moduli must satisfy mu > 0 and lam + mu > 0")

            def ev(p):
                return isotropic_voigt(lam_f(p), mu_f(p))

            lo = float(np.min(2 * mv))
            hi = float(np.max(np.maximum(2 * mv, 2 * lv + 2 * mv)))
            return ElasticTensorField(ev, lo, hi, family, {"sample_n_div": params.get("sample_n_div", 64)})
        lam, mu = float(lam), float(mu)
        if mu <= 0 or lam + mu <= 0:
            raise ValueError("Lame moduli must satisfy mu > 0 and lam + mu > 0")
        D = isotropic_voigt(lam, mu)
        lo, hi = voigt_bounds(D)
        return ElasticTensorField(
            lambda p: np.broadcast_to(D, (len(p), 3, 3)).copy(), lo, hi, family, {"lam": lam, "mu": mu}
        )

    if family == "scaled_identity":
        c = _positive("c", params.get("c", 1.0))
        D = np.diag([c, c, c / 2])
        return ElasticTensorField(
            lambda p: np.broadcast_to(D, (len(p), 3, 3)).copy(), c, c, family, {"c": c}
        )

    if family == "rough_isotropic":
        contrast = float(params["contrast"])
        if contrast < 1:
            raise ValueError("contrast must be >= 1")
        seed = int(params["seed"])
        cells = int(params.get("cells", 8))
        rng = np.random.default_rng(seed)
        mu_cells = np.exp(rng.uniform(0.0, np.log(contrast), size=(cells, cells)))
        if contrast > 1:
            # pin both ends so the declared contrast is attained exactly
            flat = mu_cells.ravel()
            flat[np.argmin(flat)] = 1.0
            flat[np.argmax(flat)] = contrast
            mu_cells = flat.reshape(cells, cells)

        def ev(p):
            ij = np.minimum(np.floor(p * cells).astype(int), cells - 1)
            mu = mu_cells[ij[:, 0], ij[:, 1]]
            return isotropic_voigt(mu, mu)

        # lam = mu: Mandel eigenvalues 2 mu (deviatoric) and 4 mu (volumetric)
        return ElasticTensorField(
            ev,
            2 * float(mu_cells.min()),
            4 * float(mu_cells.max()),
            family,
            {"contrast": contrast, "cells": cells},
            seed,
        )

    raise ValueError(f"unknown elastic family {family!r}; expected one of {ELASTIC_FAMILIES}")


def sample_on_mesh(field_, mesh: TriangleMesh) -> np.ndarray:
    """Evaluate a coefficient at triangle barycenters (piecewise constant coefficient)."""
    return np.ascontiguousarray(field_(mesh.barycenters))


def export_sampled_csv(values: np.ndarray, path) -> None:
    """One row per triangle: index followed by the flattened matrix entries."""
    values = np.asarray(values)
    flat = values.reshape(len(values), -1)
    n = values.shape[-1]
    names = [f"c{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle", *names])
        for t, row in enumerate(flat):
            w.writerow([t, *(f"{v:.17g}" for v in row)])
