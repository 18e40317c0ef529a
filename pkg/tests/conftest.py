import numpy as np
import pytest

from cbflearn.dynamics import make_planar
from cbflearn.experts import planar_expert_generator, planar_unsafe_circles
from cbflearn.features import rff_init
from cbflearn.geometry import NetParams
from cbflearn.learner import HyperParams, make_bundle, train_convex


PAPER_NET = NetParams(epsilon=0.01666, epsilon_bar=0.0333, sigma=0.0333, p=2)


def paper_hyperparams(lip_mode="gradient_norm"):
    return HyperParams(
        gamma_safe=0.1,
        gamma_unsafe=0.3,
        gamma_dyn=0.01,
        net=PAPER_NET,
        alpha_coef=1.0,
        l_h_assumed=2.5,
        l_q_assumed=1.0,
        lip_mode=lip_mode,
    )


@pytest.fixture(scope="session")
def planar_system():
    return make_planar(1.0)


@pytest.fixture(scope="session")
def planar_demos():
    """Benchmark expert dataset (shared; generation takes ~20 s)."""
    return planar_expert_generator(t_f=0.5, n_thetas=128, points_per_ray=10)


@pytest.fixture(scope="session")
def planar_layer():
    return planar_unsafe_circles(points_per_circle=160)


@pytest.fixture(scope="session")
def small_planar_demos():
    """Reduced dataset for fast unit tests."""
    return planar_expert_generator(
        points_per_circle=40, n_thetas=24, points_per_ray=6, t_f=0.5
    )


@pytest.fixture(scope="session")
def small_planar_bundle(small_planar_demos, planar_system):
    hp = paper_hyperparams()
    layer = planar_unsafe_circles(points_per_circle=48)
    rff = rff_init(120, 2, 1.2, seed=7)
    return make_bundle(small_planar_demos, layer, planar_system, rff, hp), hp


@pytest.fixture(scope="session")
def small_planar_model(small_planar_bundle):
    bundle, hp = small_planar_bundle
    return train_convex(bundle, hp)


@pytest.fixture(scope="session")
def paper_planar_bundle(planar_demos, planar_layer, planar_system):
    hp = paper_hyperparams()
    rff = rff_init(200, 2, 1.2, seed=3)
    return make_bundle(planar_demos, planar_layer, planar_system, rff, hp), hp


@pytest.fixture(scope="session")
def paper_planar_model(paper_planar_bundle):
    bundle, hp = paper_planar_bundle
    return train_convex(bundle, hp)
