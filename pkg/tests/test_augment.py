import numpy as np
import pytest

from courtprior.augment import (
    Identity,
    StyleParams,
    apply_style,
    assign_identity,
    augment_image,
    brightness,
    extract_image_instances,
    extract_instances,
    grid_mask,
    hue_shift,
    paste_instance,
    rescale_patch,
    rgb_curve,
    salt_pepper,
    sample_paste_location,
    sample_style,
)
from courtprior.coco import annotation_mask, rle_decode
from courtprior.config import StyleConfig, load_config
from courtprior.court import split_regions
from courtprior.errors import InvalidImageError, InvalidParameterError
from courtprior.imgproc import ImageBuffer
from courtprior.models import CocoAnnotation, CocoDataset
from courtprior.schemas import CropRect
from courtprior.utils import Rng, mix_seed

from .conftest import annotation_dict


def make_annotation(x, y, w, h, ann_id=1, category_id=1):
    return CocoAnnotation.model_validate(annotation_dict(ann_id, 1, category_id, x, y, w, h))


def gray_patch(value, w=8, h=6):
    return ImageBuffer(np.full((h, w, 3), value, dtype=np.uint8))


def test_rng_is_deterministic():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.integers(0, 100, size=10), b.integers(0, 100, size=10))
    assert Rng(42).derive(3, 1).random() == Rng(42).derive(3, 1).random()
    assert Rng(42).derive(3, 1).random() != Rng(42).derive(1, 3).random()


def test_rng_integers_are_inclusive():
    draws = set(Rng(1).integers(0, 2, size=200).tolist())
    assert draws == {0, 1, 2}


def test_mix_seed_depends_on_every_key():
    assert mix_seed(7, 1, 2) == mix_seed(7, 1, 2)
    assert len({mix_seed(7), mix_seed(7, 0), mix_seed(7, 1), mix_seed(8, 1)}) == 4


@pytest.mark.parametrize(
    "bbox, category, expected",
    [
        ((40, 40, 10, 20), "person", Identity.PLAYER),
        ((0, 80, 10, 18), "person", Identity.REFEREE_OR_COACH),
        ((0, 40, 10, 20), "person", Identity.REFEREE_OR_COACH),
        ((200, 200, 10, 20), "Person", Identity.REFEREE_OR_COACH),
        ((40, 40, 5, 5), "ball", Identity.BALL),
        ((0, 0, 5, 5), "sports ball", Identity.BALL),
    ],
)
def test_assign_identity(region, bbox, category, expected):
    assert assign_identity(make_annotation(*bbox), region, category) is expected


def test_assign_identity_rejects_unknown_category(region):
    with pytest.raises(InvalidParameterError):
        assign_identity(make_annotation(40, 40, 10, 20), region, "car")


def test_assign_identity_without_interior():
    region = split_regions(CropRect(x=0, y=0, w=4, h=4), 1.0)
    assert assign_identity(make_annotation(1, 1, 1, 1), region, "person") is Identity.REFEREE_OR_COACH


def test_rgb_curve_identity_and_inversion():
    patch = ImageBuffer(np.arange(48, dtype=np.uint8).reshape(4, 4, 3) * 5)
    assert rgb_curve(patch, [[(0, 0), (255, 255)]]) == patch
    inverted = rgb_curve(patch, [[(0, 255), (255, 0)]])
    assert np.array_equal(inverted.pixels, 255 - patch.pixels)


def test_rgb_curve_per_channel():
    patch = gray_patch(100)
    out = rgb_curve(patch, [[(0, 0), (255, 255)], [(0, 0), (255, 0)], [(0, 255), (255, 255)]])
    assert tuple(out.pixels[0, 0]) == (100, 0, 255)


def test_rgb_curve_preserves_order():
    gen = np.random.default_rng(11)
    ramp = ImageBuffer(np.repeat(np.arange(256, dtype=np.uint8), 3).reshape(16, 16, 3))
    for _ in range(200):
        xs = np.concatenate([[0], np.sort(gen.choice(np.arange(1, 255), 3, replace=False)), [255]])
        ys = np.sort(gen.uniform(0, 255, size=5))
        if gen.random() < 0.5:
            ys = ys[::-1]
        out = rgb_curve(ramp, [list(zip(xs.tolist(), ys.tolist()))]).pixels[..., 0].ravel()
        steps = np.diff(out.astype(int))
        assert np.all(steps >= 0) or np.all(steps <= 0)


@pytest.mark.parametrize(
    "curve",
    [
        [[(0, 0), (128, 200), (255, 100)]],
        [[(0, 0), (0, 10), (255, 255)]],
        [[(0, 0)]],
        [[(0, 0), (255, 255)], [(0, 0), (255, 255)]],
    ],
)
def test_rgb_curve_rejects(curve):
    with pytest.raises(InvalidParameterError):
        rgb_curve(gray_patch(10), curve)


def test_hue_shift_rotates_primaries():
    red = ImageBuffer(np.full((2, 2, 3), (255, 0, 0), dtype=np.uint8))
    assert tuple(hue_shift(red, 120).pixels[0, 0]) == (0, 255, 0)
    assert tuple(hue_shift(red, -120).pixels[0, 0]) == (0, 0, 255)


@pytest.mark.parametrize("degrees", [0, 360, -720])
def test_hue_shift_full_turn_is_identity(degrees):
    patch = ImageBuffer(np.random.default_rng(0).integers(0, 256, (5, 5, 3), dtype=np.uint8))
    assert hue_shift(patch, degrees) == patch


def test_hue_shift_needs_rgb():
    with pytest.raises(InvalidImageError):
        hue_shift(ImageBuffer(np.zeros((2, 2, 1), dtype=np.uint8)), 30)


def test_salt_pepper_density():
    patch = ImageBuffer(np.full((1000, 1000, 3), 128, dtype=np.uint8))
    out = salt_pepper(patch, 0.01, Rng(3)).pixels
    changed = np.any(out != 128, axis=2)
    assert abs(int(changed.sum()) - 10000) <= 299
    values = set(np.unique(out[changed]).tolist())
    assert values <= {0, 255}
    assert np.all(out[changed].min(axis=1) == out[changed].max(axis=1))


def test_salt_pepper_zero_density_is_identity():
    patch = gray_patch(77)
    assert salt_pepper(patch, 0.0, Rng(1)) == patch


def test_salt_pepper_rejects_bad_density():
    with pytest.raises(InvalidParameterError):
        salt_pepper(gray_patch(77), 1.5, Rng(1))


@pytest.mark.parametrize(
    "value, factor, expected",
    [(100, 1.5, 150), (200, 1.5, 255), (3, 0.5, 2), (100, 1.0, 100)],
)
def test_brightness(value, factor, expected):
    assert np.all(brightness(gray_patch(value), factor).pixels == expected)


def test_brightness_rejects_nonpositive_factor():
    with pytest.raises(InvalidParameterError):
        brightness(gray_patch(10), 0)


def test_grid_mask_covers_expected_fraction():
    img = ImageBuffer(np.zeros((512, 512, 3), dtype=np.uint8))
    out = grid_mask(img, 32, 0.5, Rng(9)).pixels
    holes = np.all(out == 114, axis=2)
    assert holes.mean() == pytest.approx(0.25)


def test_grid_mask_zero_ratio_is_identity():
    img = gray_patch(5)
    assert grid_mask(img, 4, 0.0, Rng(9)) == img


@pytest.mark.parametrize("unit, ratio", [(1, 0.5), (32, 1.0), (32, -0.1)])
def test_grid_mask_rejects(unit, ratio):
    with pytest.raises(InvalidParameterError):
        grid_mask(gray_patch(5), unit, ratio, Rng(9))


def test_sample_style_is_deterministic_and_in_range():
    config = StyleConfig()
    first = sample_style(Identity.PLAYER, Rng(5), config)
    assert first == sample_style(Identity.PLAYER, Rng(5), config)
    assert config.hue_range[0] <= first.hue_shift <= config.hue_range[1]
    assert config.sp_density_range[0] <= first.sp_density <= config.sp_density_range[1]
    assert config.brightness_range[0] <= first.brightness <= config.brightness_range[1]
    for curve in first.rgb_curve:
        ys = [y for _, y in curve]
        assert ys == sorted(ys)
        assert 0 <= ys[0] and ys[-1] <= 255


@pytest.mark.parametrize("identity", list(Identity))
def test_apply_style_identity_params_change_nothing(make_patch, identity):
    patch = make_patch(6, 8, identity=identity, value=90)
    out = apply_style(patch, Rng(1), StyleParams.identity())
    assert out.pixels == patch.pixels
    assert np.array_equal(out.mask, patch.mask)


def test_apply_style_only_touches_masked_pixels(make_patch):
    mask = np.zeros((8, 6), dtype=bool)
    mask[:4] = True
    patch = make_patch(6, 8, identity=Identity.REFEREE_OR_COACH, value=100, mask=mask)
    params = StyleParams(rgb_curve=((), (), ()), hue_shift=0.0, sp_density=0.0, brightness=2.0)
    out = apply_style(patch, Rng(1), params).pixels.pixels
    assert np.all(out[:4] == 200)
    assert np.all(out[4:] == 100)


def test_apply_style_player_uses_curve(make_patch):
    patch = make_patch(4, 4, value=100)
    curve = tuple(((0.0, 255.0), (255.0, 0.0)) for _ in range(3))
    params = StyleParams(rgb_curve=curve, hue_shift=0.0, sp_density=0.5, brightness=2.0)
    assert np.all(apply_style(patch, Rng(1), params).pixels.pixels == 155)


def test_rescale_patch(make_patch):
    patch = make_patch(10, 20)
    out = rescale_patch(patch, 0.5)
    assert (out.width, out.height) == (5, 10)
    assert out.mask.shape == (10, 5)
    assert out.identity is patch.identity


def test_instance_patch_rejects_empty_mask(make_patch):
    with pytest.raises(InvalidParameterError):
        make_patch(4, 4, mask=np.zeros((4, 4), dtype=bool))


def test_extract_image_instances(region):
    img = ImageBuffer(np.full((100, 100, 3), 50, dtype=np.uint8))
    anns = [
        make_annotation(40, 40, 10, 20, ann_id=1),
        make_annotation(0, 80, 10, 18, ann_id=2),
        make_annotation(45, 45, 6, 6, ann_id=3, category_id=2),
        make_annotation(10, 10, 3, 3, ann_id=4),
        make_annotation(60, 60, 10, 10, ann_id=5, category_id=3),
    ]
    patches = extract_image_instances(img, anns, region, {1: "person", 2: "ball", 3: "car"})
    assert [p.source for p in patches] == [(1, 1), (1, 2), (1, 3)]
    assert [p.identity for p in patches] == [
        Identity.PLAYER,
        Identity.REFEREE_OR_COACH,
        Identity.BALL,
    ]
    assert (patches[0].width, patches[0].height) == (10, 20)
    assert patches[0].area == 200


def test_extract_instances_skips_crowd():
    doc = {
        "images": [{"id": 1, "file_name": "a.png", "width": 100, "height": 100}],
        "annotations": [
            annotation_dict(1, 1, 1, 40, 40, 10, 20),
            {**annotation_dict(2, 1, 1, 10, 40, 10, 20), "iscrowd": 1},
        ],
        "categories": [{"id": 1, "name": "person"}],
    }
    ds = CocoDataset.model_validate(doc)
    pool = extract_instances(ds, lambda image: ImageBuffer(np.zeros((100, 100, 3), dtype=np.uint8)))
    assert [p.source for p in pool] == [(1, 1)]


@pytest.mark.parametrize(
    "identity",
    [Identity.PLAYER, Identity.REFEREE_OR_COACH, Identity.BALL],
)
def test_sample_paste_location_respects_region(region, make_patch, identity):
    patch = make_patch(6, 10, identity=identity)
    rng = Rng(17)
    for _ in range(50):
        loc = sample_paste_location(identity, region, patch, rng, image_size=(100, 100))
        assert loc is not None
        left, top = loc
        assert 0 <= left and left + 6 <= 100
        assert 0 <= top and top + 10 <= 100
        anchor = (left + 3, top + 10)
        if identity is Identity.REFEREE_OR_COACH:
            assert region.in_band(*anchor)
        else:
            assert region.in_interior(*anchor)


def test_sample_paste_location_without_interior(make_patch):
    region = split_regions(CropRect(x=0, y=0, w=10, h=10), 1.0)
    assert sample_paste_location(Identity.PLAYER, region, make_patch(2, 2), Rng(1)) is None


def test_sample_paste_location_avoids_occupied(region, make_patch):
    occupied = np.ones((100, 100), dtype=bool)
    loc = sample_paste_location(
        Identity.PLAYER, region, make_patch(4, 4), Rng(1), image_size=(100, 100), occupied=occupied
    )
    assert loc is None


def test_paste_instance_partial_occlusion(make_patch):
    img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
    anns = [make_annotation(5, 5, 10, 10)]
    patch = make_patch(4, 10, value=255)
    out, new_anns = paste_instance(img, anns, patch, (5, 5), image_id=1)

    assert np.all(out.pixels[5:15, 5:9] == 255)
    assert np.all(out.pixels[5:15, 9:15] == 0)
    survivor, pasted = new_anns
    assert survivor.id == 1
    assert survivor.area == 60
    assert survivor.bbox == (9.0, 5.0, 6.0, 10.0)
    assert pasted.id == 2
    assert pasted.area == 40
    assert pasted.sub_identity == "player"
    assert pasted.is_rle
    mask = annotation_mask(survivor, 20, 20)
    assert not np.any(mask & rle_decode(pasted.segmentation))


def test_paste_instance_drops_hidden_annotation(make_patch):
    img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
    anns = [make_annotation(5, 5, 10, 10), make_annotation(0, 0, 3, 3, ann_id=7)]
    _, new_anns = paste_instance(img, anns, make_patch(10, 10), (5, 5), image_id=1)
    assert [a.id for a in new_anns] == [7, 8]


def test_paste_instance_visibility_uses_reference_area(make_patch):
    img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
    anns = [make_annotation(0, 0, 10, 10)]
    reference = {}
    img, anns = paste_instance(
        img, anns, make_patch(10, 5), (0, 0), image_id=1, reference_areas=reference
    )
    assert anns[0].area == 50
    img, anns = paste_instance(
        img,
        anns,
        make_patch(10, 4, identity=Identity.BALL),
        (0, 5),
        image_id=1,
        visibility_min=0.2,
        reference_areas=reference,
    )
    assert reference[1] == 100
    assert [a.id for a in anns] == [2, 3]


def test_paste_instance_rejects_out_of_bounds(make_patch):
    img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
    with pytest.raises(InvalidParameterError):
        paste_instance(img, [], make_patch(5, 5), (18, 0), image_id=1)


def test_paste_instance_feathered_edges(make_patch):
    img = ImageBuffer(np.zeros((20, 20, 3), dtype=np.uint8))
    patch = make_patch(10, 10, value=200)
    out, _ = paste_instance(img, [], patch, (5, 5), image_id=1, feather_px=3)
    assert out.pixels[10, 10, 0] == 200
    assert out.pixels[5, 10, 0] == 67
    assert np.all(out.pixels[:5] == 0)


def _augment_inputs(make_patch):
    img = ImageBuffer(np.full((100, 100, 3), 60, dtype=np.uint8))
    region = split_regions(CropRect(x=0, y=0, w=100, h=100), 0.2)
    anns = [make_annotation(40, 40, 10, 20)]
    pool = [
        make_patch(6, 10, identity=Identity.PLAYER, value=180),
        make_patch(6, 10, identity=Identity.REFEREE_OR_COACH, value=20),
        make_patch(4, 4, identity=Identity.BALL, value=240, category_id=2),
    ]
    return img, anns, region, pool


def test_augment_image_is_deterministic(make_patch):
    img, anns, region, pool = _augment_inputs(make_patch)
    config = load_config(paste={"paste_min": 3, "paste_max": 3})
    out_a, anns_a = augment_image(img, anns, region, pool, config, Rng(11), image_id=1)
    out_b, anns_b = augment_image(img, anns, region, pool, config, Rng(11), image_id=1)
    assert out_a == out_b
    assert anns_a == anns_b
    pasted = [a for a in anns_a if a.sub_identity is not None]
    assert len(pasted) == 3
    assert [a.id for a in pasted] == [2, 3, 4]


def test_augment_image_pastes_do_not_overlap(make_patch):
    img, anns, region, pool = _augment_inputs(make_patch)
    config = load_config(paste={"paste_min": 4, "paste_max": 4})
    _, out_anns = augment_image(img, [], region, pool, config, Rng(2), image_id=1)
    masks = [rle_decode(a.segmentation) for a in out_anns]
    assert len(masks) == 4
    assert int(np.sum(masks, axis=0).max()) == 1


def test_augment_image_respects_regions_and_occlusion(make_patch):
    img, _, region, pool = _augment_inputs(make_patch)
    sources = [
        make_annotation(40, 40, 10, 20, ann_id=1),
        make_annotation(20, 60, 12, 12, ann_id=2),
        make_annotation(70, 25, 8, 8, ann_id=3, category_id=2),
        make_annotation(2, 10, 6, 30, ann_id=4),
    ]
    originals = {ann.id: annotation_mask(ann, 100, 100) for ann in sources}
    config = load_config(paste={"paste_min": 1, "paste_max": 4})
    total_pasted = 0
    for seed in range(200):
        _, out_anns = augment_image(img, sources, region, pool, config, Rng(seed), image_id=1)
        pasted = [a for a in out_anns if a.sub_identity is not None]
        survivors = [a for a in out_anns if a.sub_identity is None]
        total_pasted += len(pasted)

        covered = np.zeros((100, 100), dtype=bool)
        for ann in pasted:
            x, y, w, h = ann.bbox
            anchor = (x + w / 2, y + h)
            if ann.sub_identity == "official":
                assert region.in_band(*anchor), (seed, ann.bbox)
            else:
                assert region.in_interior(*anchor), (seed, ann.bbox)
            covered |= rle_decode(ann.segmentation)

        expected = {
            ann_id: mask & ~covered
            for ann_id, mask in originals.items()
            if np.count_nonzero(mask & ~covered) >= 0.1 * np.count_nonzero(mask)
        }
        assert sorted(a.id for a in survivors) == sorted(expected), seed
        for ann in survivors:
            mask = annotation_mask(ann, 100, 100)
            assert not np.any(mask & covered), seed
            assert np.array_equal(mask, expected[ann.id]), seed
            assert ann.area == np.count_nonzero(expected[ann.id])
    assert total_pasted >= 200


def test_augment_image_zero_pastes(make_patch):
    img, anns, region, pool = _augment_inputs(make_patch)
    config = load_config(paste={"paste_min": 0, "paste_max": 0})
    out, out_anns = augment_image(img, anns, region, [], config, Rng(2))
    assert out == img
    assert out_anns == anns


def test_augment_image_empty_pool(make_patch):
    img, anns, region, _ = _augment_inputs(make_patch)
    config = load_config(paste={"paste_min": 1, "paste_max": 2})
    with pytest.raises(InvalidParameterError):
        augment_image(img, anns, region, [], config, Rng(2))
