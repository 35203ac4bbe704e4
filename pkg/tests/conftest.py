import numpy as np
import pytest

from idanon.classifier import MiniNet
from idanon.fixtures import make_fixtures


def tiny_net(head_w, head_b=None, seed=0):
    """Net with a 2x2 activation grid (Z = 4) and the given head."""
    head_w = np.asarray(head_w, dtype=np.float32)
    n, j = head_w.shape
    net = MiniNet.random(seed, input_shape=(3, 8, 8), channels=j, n_classes=n)
    return net.with_head(head_w=head_w, head_b=np.zeros(n) if head_b is None else head_b)


def golden_image(seed=42):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(3, 32, 32)).astype(np.float32)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixtures")
    make_fixtures(d, seed=0)
    return d


def landmark_pair(rng, yaw_centre=None):
    """(S, S_bar): two identities in the same pose bucket, S open-mouthed, S_bar closed."""
    from idanon.landmarks import FaceParams, random_shape, synth_landmarks

    yc = float(rng.choice([-30.0, -15.0, 0.0, 15.0, 30.0])) if yaw_centre is None else yaw_centre

    def face(shape, mouth):
        return synth_landmarks(FaceParams(
            shape=shape, mouth_open=mouth,
            yaw=yc + rng.uniform(-1, 1), pitch=rng.uniform(-1, 1), roll=rng.uniform(-1, 1),
            scale=rng.uniform(60, 100), center=(rng.uniform(100, 156), rng.uniform(100, 156)),
        ))

    return face(random_shape(rng), rng.uniform(0.05, 0.2)), face(random_shape(rng), 0.0)
