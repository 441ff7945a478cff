"""Tests for deformation fields, warping and the single-axis baseline."""

import struct

import pytest
import torch

from sizemorph import config
from sizemorph.deformation import (
    DeformationField,
    compose_pyramid,
    estimate_hip_ratio,
    field_quiver_samples,
    identity_field,
    labels_to_soft,
    load_field,
    save_field,
    single_axis_field,
    single_axis_resize,
    smoothness_loss,
    soft_to_labels,
    upsample_field,
    visualize_field,
    warp_image,
    warp_segmentation,
)
from sizemorph.errors import ArgumentError, DimensionError, ShapeError


def centered_rectangle(width: int = 128, height: int = 32, rect: int = 50) -> torch.Tensor:
    image = torch.zeros(1, height, width)
    left = (width - rect) // 2
    image[:, :, left:left + rect] = 1.0
    return image


def test_identity_warp_is_exact():
    """Test that the zero field reproduces images bit for bit."""
    image = torch.rand(2, 3, 17, 23)
    out = warp_image(image, identity_field(17, 23).displacements)
    assert torch.equal(out, image)


def test_identity_field_rejects_empty_grid():
    """Test identity field with a zero dimension."""
    with pytest.raises(DimensionError):
        identity_field(0, 4)


def test_deformation_field_validates_shape():
    """Test that a field must be H×W×2 and finite."""
    with pytest.raises(ShapeError):
        DeformationField(torch.zeros(4, 4, 3))
    with pytest.raises(ArgumentError):
        DeformationField(torch.full((4, 4, 2), float("nan")))


def test_constant_shift_moves_content():
    """Test a one-pixel shift in x reads from the right-hand neighbour."""
    image = torch.arange(8.0).view(1, 1, 8).expand(1, 4, 8).clone()
    field = torch.zeros(4, 8, 2)
    field[..., 0] = 2 / 8
    out = warp_image(image, field)
    assert torch.allclose(out[0, :, :7], image[0, :, 1:])
    # border clamp
    assert torch.allclose(out[0, :, 7], image[0, :, 7])


def test_constant_image_survives_any_field():
    """Test that a constant image stays constant under a random field."""
    torch.manual_seed(3)
    image = torch.full((2, 3, 12, 12), 0.37)
    out = warp_image(image, 0.8 * torch.randn(2, 12, 12, 2))
    assert torch.allclose(out, image, atol=1e-6)


def test_single_label_map_stays_single_label():
    """Test that a one-class segmentation keeps all its mass in that class."""
    torch.manual_seed(4)
    soft = labels_to_soft(torch.full((10, 10), 4))
    out = warp_segmentation(soft, 0.5 * torch.randn(10, 10, 2))
    assert torch.allclose(out[4], torch.ones(10, 10), atol=1e-6)
    assert torch.equal(soft_to_labels(out), torch.full((10, 10), 4))


def test_checkerboard_shift_matches_index_shift():
    """Test a one-pixel shift of a two-label checkerboard against shifting the label indices."""
    rows, cols = torch.meshgrid(torch.arange(8), torch.arange(8), indexing="ij")
    labels = (rows + cols) % 2
    field = torch.zeros(8, 8, 2)
    field[..., 0] = 2 / 8
    out = warp_segmentation(labels_to_soft(labels), field)
    expected = torch.cat([labels[:, 1:], labels[:, 7:]], dim=1)
    assert torch.allclose(out, labels_to_soft(expected), atol=1e-6)
    assert torch.allclose(out.sum(dim=0), torch.ones(8, 8), atol=1e-6)


def test_warp_shape_mismatch():
    """Test warping with a field of the wrong size."""
    with pytest.raises(ShapeError):
        warp_image(torch.zeros(3, 8, 8), torch.zeros(4, 4, 2))


def test_warp_gradients_match_finite_differences():
    """Test warp gradients w.r.t. image and field in float64."""
    torch.manual_seed(0)
    image = torch.rand(1, 2, 6, 7, dtype=torch.float64, requires_grad=True)
    field = (0.13 * torch.randn(1, 6, 7, 2, dtype=torch.float64)).requires_grad_(True)
    assert torch.autograd.gradcheck(warp_image, (image, field), eps=1e-6, atol=1e-5)


def test_warp_segmentation_keeps_mass():
    """Test that warped soft segmentations still sum to one per pixel."""
    torch.manual_seed(1)
    labels = torch.randint(0, config.NUM_CLASSES, (2, 16, 16))
    soft = labels_to_soft(labels)
    field = 0.3 * torch.randn(2, 16, 16, 2)
    out = warp_segmentation(soft, field)
    assert torch.allclose(out.sum(dim=1), torch.ones(2, 16, 16), atol=1e-5)


def test_warp_segmentation_needs_nine_channels():
    """Test warp_segmentation on a hard label map."""
    with pytest.raises(ShapeError):
        warp_segmentation(torch.zeros(1, 3, 8, 8), torch.zeros(8, 8, 2))


def test_labels_round_trip():
    """Test labels → one-hot → labels."""
    labels = torch.randint(0, config.NUM_CLASSES, (5, 7))
    assert torch.equal(soft_to_labels(labels_to_soft(labels)), labels)


def test_labels_out_of_range():
    """Test one-hot encoding rejects label 9."""
    with pytest.raises(ArgumentError):
        labels_to_soft(torch.full((2, 2), config.NUM_CLASSES))


def test_upsample_keeps_constant_field():
    """Test that normalized units survive upsampling unchanged."""
    field = torch.full((4, 4, 2), 0.25)
    up = upsample_field(field, 16, 16)
    assert up.shape == (16, 16, 2)
    assert torch.allclose(up, torch.full((16, 16, 2), 0.25))


def test_upsample_matches_bilinear_weights():
    """Test 2×2 → 4×4 against per-pixel bilinear weights at pixel centers, edges clamped."""
    torch.manual_seed(5)
    field = torch.randn(2, 2, 2, dtype=torch.float64)
    weights = torch.tensor([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]], dtype=torch.float64)
    up = upsample_field(field, 4, 4)
    for k in range(2):
        assert torch.allclose(up[..., k], weights @ field[..., k] @ weights.T, atol=1e-12)


def test_upsample_refuses_downsampling():
    """Test upsample_field to a smaller grid."""
    with pytest.raises(DimensionError):
        upsample_field(torch.zeros(8, 8, 2), 4, 4)


def test_compose_pyramid_sums_levels():
    """Test that constant levels add up at the finest resolution."""
    levels = [torch.full((1, r, r, 2), 0.1) for r in (4, 8, 16, 32, 64)]
    total = compose_pyramid(levels)
    assert total.shape == (1, 64, 64, 2)
    assert torch.allclose(total, torch.full((1, 64, 64, 2), 0.5))


def test_compose_pyramid_is_linear():
    """Test compose(a + b) == compose(a) + compose(b)."""
    torch.manual_seed(2)
    a = [torch.randn(1, r, r, 2) for r in (4, 8, 16)]
    b = [torch.randn(1, r, r, 2) for r in (4, 8, 16)]
    summed = compose_pyramid([x + y for x, y in zip(a, b)])
    assert torch.allclose(summed, compose_pyramid(a) + compose_pyramid(b), atol=1e-5)


def test_compose_pyramid_rejects_gaps():
    """Test pyramid levels that do not double."""
    with pytest.raises(ShapeError):
        compose_pyramid([torch.zeros(4, 4, 2), torch.zeros(16, 16, 2)])
    with pytest.raises(ShapeError):
        compose_pyramid([])


def test_smoothness_of_center_spike():
    """Test a unit spike in the middle of a 3×3 field: 4 squared differences over 12 pairs."""
    field = torch.zeros(3, 3, 2, dtype=torch.float64)
    field[1, 1, 0] = 1.0
    assert smoothness_loss(field).item() == pytest.approx(1 / 3)


def test_smoothness_zero_for_constant_field():
    """Test that a constant field costs nothing."""
    assert smoothness_loss(torch.full((1, 8, 8, 2), 0.7)).item() == 0.0


def test_smoothness_ignores_constant_offsets():
    """Test that adding a constant displacement leaves the loss unchanged."""
    torch.manual_seed(6)
    for _ in range(5):
        field = torch.randn(1, 9, 7, 2, dtype=torch.float64)
        offset = torch.randn(2, dtype=torch.float64)
        assert abs(smoothness_loss(field + offset).item() - smoothness_loss(field).item()) < 1e-9


def test_smoothness_gradient():
    """Test smoothness gradients in float64."""
    field = torch.randn(1, 5, 4, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(smoothness_loss, (field,))


def test_single_axis_resize_widens_rectangle():
    """Test that 1.36 turns a centered 50 px block into 68 px."""
    out = single_axis_resize(centered_rectangle(), 1.36)
    widths = (out > 0.5).sum(dim=-1)
    assert torch.all((widths - 68).abs() <= 1)


def test_single_axis_resize_keeps_rows():
    """Test that the baseline only moves content horizontally."""
    field = single_axis_field(16, 32, 1.5)
    assert torch.all(field.displacements[..., 1] == 0)
    assert torch.allclose(field.displacements[0], field.displacements[7])


def test_single_axis_ratio_one_is_identity():
    """Test ratio 1 gives the identity field."""
    assert torch.all(single_axis_field(8, 8, 1.0).displacements == 0)


def test_single_axis_rejects_bad_ratio():
    """Test non-positive ratios."""
    with pytest.raises(ArgumentError):
        single_axis_field(8, 8, 0.0)


def test_estimate_hip_ratio():
    """Test the mean-distance ratio."""
    assert estimate_hip_ratio([10.0, 30.0], [27.2, 27.2]) == pytest.approx(1.36)
    with pytest.raises(ArgumentError):
        estimate_hip_ratio([], [1.0])


def test_dfield_file_layout(tmp_path):
    """Test the .dfield header and payload."""
    field = torch.randn(5, 7, 2)
    path = save_field(field, tmp_path / "f.dfield")
    raw = path.read_bytes()
    assert struct.unpack("<ii", raw[:8]) == (5, 7)
    assert len(raw) == 8 + 5 * 7 * 2 * 4
    assert torch.equal(load_field(path).displacements, field)


def test_dfield_truncated(tmp_path):
    """Test loading a truncated .dfield file."""
    path = save_field(torch.zeros(4, 4, 2), tmp_path / "f.dfield")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ShapeError):
        load_field(path)


def test_quiver_arrows_show_content_motion():
    """Test quiver sampling stride and arrow direction."""
    field = torch.zeros(64, 64, 2)
    field[..., 0] = 0.1
    xs, ys, u, v = field_quiver_samples(field, stride=config.QUIVER_STRIDE)
    assert len(xs) == 16
    assert set(xs.tolist()) == {0, 20, 40, 60}
    assert u.tolist() == pytest.approx([-3.2] * 16)
    assert v.tolist() == pytest.approx([0.0] * 16)


def test_visualize_field_writes_png(tmp_path):
    """Test the quiver plot over an image."""
    out = visualize_field(single_axis_field(32, 32, 1.36), 8, tmp_path / "q.png", torch.rand(3, 32, 32))
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
