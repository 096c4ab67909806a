import numpy as np
import pytest

from curriculum3d.errors import ConfigurationError
from curriculum3d.phantom import (
    PhantomConfig, breast_labels, generate_case, generate_phantom, kinetic_curve,
    lesion_weight, malignant_assignment, tissue_mask,
)


def test_kinetic_curve_baseline_zero():
    for kind in ("benign", "malignant", "background", "vessel"):
        assert kinetic_curve(kind, 0, 5) == 0.0


def test_malignant_curve_washes_out():
    vals = [kinetic_curve("malignant", i, 5) for i in range(5)]
    peak = int(np.argmax(vals))
    assert peak in {1, 2, 3}
    assert vals[4] < vals[peak]
    assert all(a < b for a, b in zip(vals[:peak], vals[1:peak + 1]))
    assert all(a > b for a, b in zip(vals[peak:], vals[peak + 1:]))


@pytest.mark.parametrize("n", [3, 4, 5, 6, 9, 12])
def test_curve_shapes(n):
    ben = [kinetic_curve("benign", i, n) for i in range(n)]
    bg = [kinetic_curve("background", i, n) for i in range(n)]
    mal = [kinetic_curve("malignant", i, n) for i in range(n)]
    ves = [kinetic_curve("vessel", i, n) for i in range(n)]
    assert ben == sorted(ben)
    # vessels saturate without washing out
    assert ves == sorted(ves) and ves[-1] == pytest.approx(1.0)
    assert bg == sorted(bg)
    assert bg[-1] < ben[-1]
    peak = int(np.argmax(mal))
    assert 0 < peak < n - 1
    for v in ben + bg + mal + ves:
        assert 0.0 <= v <= 1.0


def test_kinetic_curve_errors():
    with pytest.raises(ValueError):
        kinetic_curve("benign", 5, 5)
    with pytest.raises(ValueError):
        kinetic_curve("benign", -1, 5)
    with pytest.raises(ValueError):
        kinetic_curve("cyst", 0, 5)


def test_config_errors():
    with pytest.raises(ConfigurationError):
        PhantomConfig(volume_shape=(64, 64, 4))
    with pytest.raises(ConfigurationError):
        PhantomConfig(volume_shape=(16, 16, 16), lesion_radius_range=(3.0, 6.0))
    with pytest.raises(ConfigurationError):
        PhantomConfig(malignant_patient_fraction=1.5)
    with pytest.raises(ConfigurationError):
        PhantomConfig(volume_shape=(63, 64, 16))


def test_channels():
    c = PhantomConfig()
    assert c.n_channels == 6
    assert PhantomConfig(include_t2=False).n_channels == 5


def test_determinism(small_config):
    a = generate_phantom(small_config)
    b = generate_phantom(small_config)
    for x, y in zip(a, b):
        assert x.volume.tobytes() == y.volume.tobytes()
        assert x.lesions == y.lesions


def test_parallel_equals_serial(small_config):
    a = generate_phantom(small_config)
    b = generate_phantom(small_config, jobs=3)
    assert [x.volume.tobytes() for x in a] == [x.volume.tobytes() for x in b]


def test_malignant_fraction():
    cfg = PhantomConfig(n_patients=100, malignant_patient_fraction=0.748)
    flags = malignant_assignment(cfg)
    assert 70 <= flags.sum() <= 80


def test_malignant_fraction_generated():
    cfg = PhantomConfig(n_patients=50, volume_shape=(32, 32, 8), seed=11)
    cases = generate_phantom(cfg)
    frac = np.mean([c.left_label or c.right_label for c in cases])
    assert abs(frac - cfg.malignant_patient_fraction) <= 0.05


def test_lesion_free_case():
    cfg = PhantomConfig(n_patients=1, volume_shape=(32, 32, 8),
                        malignant_patient_fraction=0.0, healthy_breast_probability=1.0)
    (case,) = generate_phantom(cfg)
    assert case.lesions == []
    assert not case.left_label and not case.right_label


def test_label_consistency(small_cases, small_config):
    for c in small_cases:
        assert breast_labels(c.lesions, small_config.volume_shape[0]) == (c.left_label, c.right_label)


def test_centers_inside_volume(small_cases, small_config):
    shape = small_config.volume_shape
    for c in small_cases:
        for l in c.lesions:
            assert all(0 <= v < s for v, s in zip(l.center, shape))


def test_volume_layout(small_cases, small_config):
    X, Y, Z = small_config.volume_shape
    for c in small_cases:
        assert c.volume.shape == (6, X, Y, Z)
        assert c.volume.dtype == np.float32
        # posterior half is air
        assert np.all(c.volume[:, :, Y // 2:] == 0)


def test_separability_and_visibility():
    cfg = PhantomConfig(n_patients=30, volume_shape=(32, 32, 8), seed=5, noise_sigma=0.0)
    n = cfg.n_timepoints
    mask = tissue_mask(cfg.volume_shape)
    for c in generate_phantom(cfg):
        drops = {True: [], False: []}
        for l in c.lesions:
            w = lesion_weight(cfg.volume_shape, l.center, l.radius, cfg.lesion_z_scale) > 0.99
            curve = c.volume[:n][:, w].mean(axis=1)
            drops[l.malignant].append(curve.max() - curve[-1])
            peak_t = int(np.argmax(curve))
            bg = c.volume[peak_t][mask & ~(w)].mean()
            assert c.volume[(peak_t,) + tuple(l.center)] > bg
        if drops[True] and drops[False]:
            assert np.mean(drops[True]) > np.mean(drops[False])


def test_case_index_independent(small_config):
    # randomness derives from (seed, index) only
    a = generate_case(small_config, 5, True)
    b = generate_case(small_config, 5, True)
    assert a.volume.tobytes() == b.volume.tobytes()
    c = generate_case(small_config, 6, True)
    assert a.volume.tobytes() != c.volume.tobytes()
