from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from src.core.exceptions import ConfigError, ContractError
from src.scenes import (
    DomainSpec,
    ProceduralAugmenter,
    augment_for_class,
    augment_for_class_with_truth,
    default_dynamic_classes,
    load_dataset,
    make_domain,
    read_dataset_manifest,
    save_dataset,
)


def test_make_domain_is_pure(tiny_spec) -> None:
    """Same spec, size and seed give identical images and labels."""
    a = make_domain(tiny_spec, 4, seed=3)
    b = make_domain(tiny_spec, 4, seed=3, workers=2)
    for x, y in zip(a.scenes, b.scenes):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.labels.ids, y.labels.ids)
    c = make_domain(tiny_spec, 4, seed=4)
    assert not np.array_equal(a.scenes[0].image, c.scenes[0].image)


def test_images_in_unit_range(tiny_spec) -> None:
    data = make_domain(tiny_spec, 3, seed=0)
    for scene in data.scenes:
        assert scene.image.shape == (3, 16, 16)
        assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0


def test_prior_limits_foreground_classes() -> None:
    """Blobs only use classes with nonzero frequency; background stripes stay 0..2."""
    spec = DomainSpec("only_person", num_classes=6, class_frequencies=(0, 0, 0, 1.0, 0, 0))
    data = make_domain(spec, 8, seed=1)
    seen = set()
    for scene in data.scenes:
        seen.update(np.unique(scene.labels.ids).tolist())
    assert seen <= {0, 1, 2, 3}
    assert 3 in seen


def test_default_prior_covers_dynamic_classes(tiny_spec) -> None:
    assert default_dynamic_classes(6) == [3, 4, 5]
    np.testing.assert_allclose(tiny_spec.prior, [0, 0, 0, 1 / 3, 1 / 3, 1 / 3])


def test_spec_validation() -> None:
    with pytest.raises(ConfigError):
        DomainSpec("bad", num_classes=3, class_frequencies=(0.5, 0.2, 0.2)).validate()
    with pytest.raises(ConfigError):
        DomainSpec.from_dict({"domain_id": "x", "weather": "rain"})
    with pytest.raises(ContractError):
        make_domain(DomainSpec("ok"), 0, seed=0)


def test_spec_dict_roundtrip() -> None:
    spec = DomainSpec("city", color_offset=(0.1, 0.0, -0.1), contrast=0.8)
    assert DomainSpec.from_dict(spec.to_dict()) == spec


def test_pixel_frequencies_follow_prior() -> None:
    """Foreground pixel counts rank the classes the way the prior does."""
    prior = (0, 0, 0, 0.35, 0.25, 0.2, 0.12, 0.08)
    spec = DomainSpec("ranked", num_classes=8, class_frequencies=prior, height=16, width=16)
    data = make_domain(spec, 200, seed=11)
    counts = np.zeros(8)
    for scene in data.scenes:
        counts += np.bincount(scene.labels.ids.ravel(), minlength=8)
    rho, _ = spearmanr(prior[3:], counts[3:])
    assert rho > 0.8


def test_photometric_shift_separates_domains(tiny_spec) -> None:
    """Mean colour moves by more than half the configured offset difference."""
    warm = replace(tiny_spec, domain_id="warm", color_offset=(0.1, 0.0, 0.0))
    cold = replace(tiny_spec, domain_id="cold", color_offset=(-0.1, 0.0, 0.0))
    a = np.stack(make_domain(warm, 20, seed=5).images).mean(axis=(0, 2, 3))
    b = np.stack(make_domain(cold, 20, seed=5).images).mean(axis=(0, 2, 3))
    assert np.linalg.norm(a - b) > 0.2 / 2


def test_unlabeled_set_has_no_label_files(tiny_spec, tmp_path) -> None:
    """An unlabeled dataset on disk carries images and a manifest only."""
    data = make_domain(tiny_spec, 3, seed=0, labeled=False)
    save_dataset(data, tmp_path / "server", num_classes=6)
    assert not list((tmp_path / "server").glob("*.labels.u8"))
    manifest = read_dataset_manifest(tmp_path / "server")
    assert manifest["labeled"] is False and manifest["n"] == 3
    loaded = load_dataset(tmp_path / "server")
    assert not loaded.labeled
    assert all(s.labels is None for s in loaded.scenes)


def test_labeled_set_roundtrip(tiny_spec, tmp_path) -> None:
    data = make_domain(tiny_spec, 2, seed=0)
    save_dataset(data, tmp_path / "client", num_classes=6)
    loaded = load_dataset(tmp_path / "client")
    np.testing.assert_array_equal(loaded.scenes[1].labels.ids, data.scenes[1].labels.ids)
    np.testing.assert_allclose(loaded.scenes[1].image, data.scenes[1].image, atol=1e-6)
    assert load_dataset(tmp_path / "client", with_labels=False).labeled is False


def test_labeled_set_missing_labels(tiny_spec, tmp_path) -> None:
    save_dataset(make_domain(tiny_spec, 2, seed=0), tmp_path / "c", num_classes=6)
    (tmp_path / "c" / "00001.labels.u8").unlink()
    with pytest.raises(ContractError):
        load_dataset(tmp_path / "c")


def test_augmented_images_feature_requested_class(tiny_spec) -> None:
    """The requested class covers at least a quarter of each hidden layout."""
    images, layouts = augment_for_class_with_truth(5, 6, tiny_spec, seed=2)
    assert len(images) == 6
    for layout in layouts:
        assert np.mean(layout.ids == 5) >= 0.25


def test_augmentation_is_seeded(tiny_spec) -> None:
    a = augment_for_class(4, 2, tiny_spec, seed=9)
    b = augment_for_class(4, 2, tiny_spec, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert augment_for_class(4, 0, tiny_spec, seed=9) == []


def test_augmenter_rejects_unknown_class(tiny_spec) -> None:
    augmenter = ProceduralAugmenter(tiny_spec)
    with pytest.raises(ContractError):
        augmenter.generate(6, 1, seed=0)
    assert "outside" in augmenter.get_last_error()
    scenes = augmenter.generate(3, 2, seed=1)
    assert all(s.labels is None for s in scenes)
    assert len(augmenter.hidden_labels(3, 1)) == 2
