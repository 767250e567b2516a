import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import pytest

from nsal import cli
from nsal.data import make_shape_image
from nsal.model import Network, accuracy, load_model, predict
from nsal.saliency import SaliencyConfig, retrace_best, run_linear, run_nonlinear
from nsal.tensor import Dense, Flatten, Softmax


@dataclass
class AffineCase:
    """Two-class dense-softmax model whose prediction is pinned by clipping.

    The dense weights are zero everywhere except an "object" block whose
    image pixels start at 1.0. Enhancing class 0 pushes those pixels further
    up, where clipping holds them, so the logits (and hence the gradient
    field) never change: the linear and nonlinear procedures coincide
    exactly. The object block is small enough that even a 95% blur fraction
    selects only zero-gradient background pixels.
    """

    net: Network
    image: np.ndarray
    target: int
    object_mask: np.ndarray


def make_affine_case(side: int = 16, seed: int = 5) -> AffineCase:
    object_mask = np.zeros((side, side), dtype=bool)
    object_mask[side // 2 - 1 : side // 2 + 1, side // 2 - 3 : side // 2 + 3] = True
    flat = np.repeat(object_mask.ravel(), 3)
    weight = np.zeros((2, side * side * 3), dtype=np.float32)
    weight[0, flat] = 0.25
    weight[1, flat] = -0.25
    net = Network(
        [Flatten(), Dense(weight, np.zeros(2, np.float32)), Softmax()],
        (side, side, 3),
        ["pro", "anti"],
    )
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 0.9, (side, side, 3)).astype(np.float32)
    image[object_mask] = 1.0
    return AffineCase(net=net, image=image, target=0, object_mask=object_mask)


@pytest.fixture
def affine_case() -> AffineCase:
    return make_affine_case()


@pytest.fixture(scope="session")
def acceptance_env(tmp_path_factory):
    """Generated 2000-image dataset plus a model trained with CLI defaults."""
    base = tmp_path_factory.mktemp("acceptance")
    data_dir = base / "dataset"
    assert cli.main(["gen-data", "--seed", "0", "--count", "2000", "--out-dir", str(data_dir)]) == 0
    model_path = base / "model.nsal"
    start = time.perf_counter()
    assert cli.main(["train", "--data-dir", str(data_dir), "--model-out", str(model_path)]) == 0
    train_seconds = time.perf_counter() - start
    net = load_model(model_path)
    images, labels = cli._load_labeled_dir(data_dir)
    return SimpleNamespace(
        base=base,
        data_dir=data_dir,
        model_path=model_path,
        net=net,
        train_seconds=train_seconds,
        train_accuracy=accuracy(net, images, labels),
    )


@pytest.fixture(scope="session")
def enhancement_cases(acceptance_env):
    """Twenty seeded test images whose target class starts below 5%.

    For each case the default-config nonlinear run, the blur-only ablation
    and the linear run are reduced to the quantities the acceptance criteria
    compare; one full trajectory is kept for the retrace criterion.
    """
    net = acceptance_env.net
    cfg = SaliencyConfig()
    blur_only_cfg = SaliencyConfig(step_size=0.0)
    cases = []
    kept_trajectory = None
    nonlinear_seconds = 0.0
    index = 0
    while len(cases) < 20 and index < 200:
        image, _ = make_shape_image(424242, index)
        index += 1
        probs = predict(net, image)
        ranked = np.argsort(probs)[::-1]
        target = next((int(c) for c in ranked if probs[c] < 0.05), None)
        if target is None:
            continue
        start = time.perf_counter()
        nonlinear = run_nonlinear(net, image, target, cfg)
        nonlinear_seconds += time.perf_counter() - start
        blur_only = run_nonlinear(net, image, target, blur_only_cfg)
        linear = run_linear(net, image, target, cfg)
        result = retrace_best(nonlinear)
        if kept_trajectory is None:
            kept_trajectory = nonlinear
        cases.append(
            SimpleNamespace(
                image=image,
                target=target,
                start_prob=float(probs[target]),
                best_nonlinear=result.best_prob,
                best_blur_only=retrace_best(blur_only).best_prob,
                final_mask_nonlinear=nonlinear.steps[-1].mask,
                final_mask_linear=linear.steps[-1].mask,
            )
        )
    assert len(cases) == 20, "could not assemble 20 qualifying test cases"
    return SimpleNamespace(
        cases=cases,
        nonlinear_seconds=nonlinear_seconds,
        kept_trajectory=kept_trajectory,
    )
