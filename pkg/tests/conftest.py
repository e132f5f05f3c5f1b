"""Shared model fixtures: the bundled SISO loop and the cement-mill loop."""

import numpy as np
import pytest

from ctlmpc.transfer import RationalTransfer, TransferMatrix

TF = RationalTransfer.from_factors


@pytest.fixture
def siso_plant_G():
    g = TF(gain=10.12, num_factors=[[1, -3.41]],
           den_factors=[[1, 15.9], [1, 24.2]], delay=2.5)
    return TransferMatrix(((g,),), kind="deterministic")


@pytest.fixture
def siso_plant_Gd():
    gd = TF(gain=-0.5, den_factors=[[1, 5.8], [1, 4.7]])
    return TransferMatrix(((gd,),), kind="disturbance")


@pytest.fixture
def siso_model_G():
    g = TF(gain=10.12, num_factors=[[1, -3.58]],
           den_factors=[[1, 18.9], [1, 22.2]], delay=2.5)
    return TransferMatrix(((g,),), kind="deterministic")


@pytest.fixture
def siso_model_H():
    h = TF(gain=0.6, den_factors=[[0, 1], [1, 1]])
    return TransferMatrix(((h,),), kind="stochastic")


@pytest.fixture
def mill_plant_G():
    rows = (
        (TF(gain=0.62, den_factors=[[1, 45], [1, 8]], delay=5.0),
         TF(gain=0.29, num_factors=[[1, 8]], den_factors=[[1, 2], [1, 38]], delay=1.5)),
        (TF(gain=-15.0, den_factors=[[1, 60]], delay=5.0),
         TF(gain=5.0, den_factors=[[1, 14], [1, 1]], delay=0.1)),
    )
    return TransferMatrix(rows, kind="deterministic")


@pytest.fixture
def mill_plant_Gd():
    rows = (
        (TF(gain=-1.0, den_factors=[[1, 32], [1, 21]], delay=3.0),),
        (TF(gain=60.0, den_factors=[[1, 30], [1, 20]]),),
    )
    return TransferMatrix(rows, kind="disturbance")


@pytest.fixture
def mill_model_G():
    rows = (
        (TF(gain=0.8, den_factors=[[1, 30], [1, 15]], delay=5.0),
         TF(gain=0.45, den_factors=[[1, 30.0]], delay=2.0)),
        (TF(gain=-17.7, den_factors=[[1, 65], [1, 15]], delay=5.0),
         TF(gain=9.4, den_factors=[[1, 15]], delay=0.3)),
    )
    return TransferMatrix(rows, kind="deterministic")


@pytest.fixture
def mill_model_H():
    zero = RationalTransfer.zero()
    rows = (
        (TF(gain=0.5, den_factors=[[0, 1], [1, 1]]), zero),
        (zero, TF(gain=1.0, den_factors=[[0, 1], [1, 1]])),
    )
    return TransferMatrix(rows, kind="stochastic")


def random_stable_system(rng, n, nu, nz=None):
    """Random strictly stable continuous-time (A, B, C, D) with D = 0."""
    nz = nu if nz is None else nz
    A = rng.normal(size=(n, n))
    A = A - (np.max(np.real(np.linalg.eigvals(A))) + 0.5 + rng.uniform(0.1, 1.0)) * np.eye(n)
    B = rng.normal(size=(n, nu))
    C = rng.normal(size=(nz, n))
    D = np.zeros((nz, nu))
    return A, B, C, D


def random_psd(rng, n, ridge=0.0):
    W = rng.normal(size=(n, n))
    return W.T @ W + ridge * np.eye(n)
