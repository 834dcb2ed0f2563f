# tests/test_visualization.py
import numpy as np
import pytest
from PIL import Image

from agents.visualization_agent import birdseye_occupancy_image, birdseye_pca_image, save_png
from models.data_models import GridSpec, VoxelGrid
from models.errors import DegenerateFeatures, ShapeMismatch

SPEC = GridSpec(np.zeros(3), np.full(3, 4.0), (4, 2, 5))


def test_pca_image_shape_and_range():
    rng = np.random.default_rng(0)
    image = birdseye_pca_image(VoxelGrid(SPEC, rng.normal(size=(4, 2, 5, 8)).astype(np.float32)))
    assert image.shape == (4, 5, 3)
    assert image.min() >= 0.0 and image.max() <= 1.0
    # min-max scaling stretches every principal component to the full range
    assert np.allclose(image.reshape(-1, 3).min(axis=0), 0.0)
    assert np.allclose(image.reshape(-1, 3).max(axis=0), 1.0)


def test_pca_image_of_constant_features_falls_back_or_raises():
    constant = VoxelGrid(SPEC, np.ones((4, 2, 5, 6), dtype=np.float32))
    image = birdseye_pca_image(constant)
    assert np.all(image == 0.0)
    with pytest.raises(DegenerateFeatures):
        birdseye_pca_image(constant, strict=True)


def test_pca_image_averages_over_the_vertical_axis():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(4, 2, 5, 8)).astype(np.float32)
    averaged = np.repeat(data.mean(axis=1, keepdims=True), 2, axis=1)
    assert np.allclose(birdseye_pca_image(VoxelGrid(SPEC, data)), birdseye_pca_image(VoxelGrid(SPEC, averaged)), atol=1e-4)


def test_pca_needs_three_channels():
    with pytest.raises(ShapeMismatch):
        birdseye_pca_image(VoxelGrid(SPEC, np.zeros((4, 2, 5, 2), dtype=np.float32)))


def test_occupancy_image_takes_vertical_max():
    data = np.zeros((4, 2, 5, 4), dtype=np.float32)
    data[1, 1, 3, 3] = 1.0
    image = birdseye_occupancy_image(VoxelGrid(SPEC, data))
    assert image.shape == (4, 5)
    assert image[1, 3] == 1.0 and image.sum() == 1.0


def test_png_carries_metadata(tmp_path):
    path = save_png(tmp_path / "img" / "a.png", np.full((3, 4, 3), 0.5), {"seed": 3, "config_hash": "abc"})
    with Image.open(path) as img:
        assert img.size == (4, 3)
        assert img.text["seed"] == "3"
        assert img.text["config_hash"] == "abc"
        assert np.asarray(img)[0, 0, 0] == 128
