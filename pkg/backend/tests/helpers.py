# backend/tests/helpers.py
import numpy as np


def random_hermitian_psd(rng, k, scale=1.0):
    a = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    return scale * (a @ a.conj().T) / k


def random_complex(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def relative_frobenius(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)
