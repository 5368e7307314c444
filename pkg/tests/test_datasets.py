import warnings

import numpy as np
import pytest

from scribble2label import datasets as ds
from scribble2label.core import ScribbleMap
from scribble2label.errors import ConfigError, DataError, FormatError
from scribble2label.scribblegen import generate_scribbles
from scribble2label.synthdata import SynthConfig, generate


def synth_dataset(root, n=10, scribbles=True, seed=0):
    items = generate(SynthConfig(n_images=n, seed=seed))
    scr = [generate_scribbles(it.mask, 0.3, seed=k) for k, it in enumerate(items)] if scribbles else None
    m = ds.write_dataset(root, [it.image for it in items], [it.mask for it in items],
                         [it.instances for it in items], scr)
    m = ds.split(m, (0.6, 0.2, 0.2), seed=0)
    m.write()
    return items, m


def test_split_sizes_forty_and_ten():
    assert ds.split_sizes(40, (0.6, 0.2, 0.2)) == (24, 8, 8)
    assert ds.split_sizes(10, (0.6, 0.2, 0.2)) == (6, 2, 2)


def test_split_partition_is_deterministic(tmp_path):
    m = ds.DatasetManifest(tmp_path, [ds.ManifestEntry(f"x{i:02d}", f"images/x{i:02d}.png") for i in range(40)])
    a = ds.split(m, seed=3)
    b = ds.split(m, seed=3)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]
    assert (len(a.ids("train")), len(a.ids("val")), len(a.ids("test"))) == (24, 8, 8)
    assert set(a.ids()) == set(a.ids("train")) | set(a.ids("val")) | set(a.ids("test"))
    # shuffled order of entries does not change the partition
    rev = ds.DatasetManifest(tmp_path, list(reversed(m.entries)))
    assert {e.id: e.split for e in ds.split(rev, seed=3).entries} == {e.id: e.split for e in a.entries}


def test_ratios_all_train(tmp_path):
    m = ds.DatasetManifest(tmp_path, [ds.ManifestEntry(f"x{i}", "i.png") for i in range(7)])
    assert ds.split(m, (1, 0, 0)).ids("train") == m.ids()


@pytest.mark.parametrize("ratios", [(0.6, 0.2, 0.3), (0.5, 0.5), (1.2, -0.1, -0.1)])
def test_bad_ratios(ratios):
    with pytest.raises(ConfigError):
        ds.check_ratios(ratios)


def test_duplicate_id_rejected(tmp_path):
    with pytest.raises(DataError, match="dup"):
        ds.DatasetManifest(tmp_path, [ds.ManifestEntry("dup", "a.png"), ds.ManifestEntry("dup", "b.png")])
    (tmp_path / "manifest.tsv").write_text("id\timage\tmask\tscribble\tinstances\tsplit\n"
                                           "a\ta.png\t-\t-\t-\t-\na\tb.png\t-\t-\t-\t-\n")
    with pytest.raises(DataError):
        ds.DatasetManifest.read(tmp_path)


def test_manifest_line_numbers(tmp_path):
    (tmp_path / "manifest.tsv").write_text("id\timage\tmask\tscribble\tinstances\tsplit\n"
                                           "a\ta.png\t-\t-\t-\n")
    with pytest.raises(DataError, match=":2:"):
        ds.DatasetManifest.read(tmp_path)


def test_synthetic_roundtrip_without_warnings(tmp_path):
    items, _ = synth_dataset(tmp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        manifest, samples = ds.load_dataset(tmp_path)
    assert len(samples) == 10
    for k, sid in enumerate(sorted(samples)):
        s = samples[sid]
        np.testing.assert_array_equal(s.gt_mask, items[k].mask)
        np.testing.assert_array_equal(s.gt_instances, items[k].instances)
        # 16-bit storage keeps the float image to ~1e-5
        assert np.max(np.abs(s.image - items[k].image)) < 1e-4
    assert len(ds.samples_for_split(manifest, samples, "train")) == 6


def test_missing_scribbles_for_train_entry(tmp_path):
    synth_dataset(tmp_path, scribbles=False)
    with pytest.raises(DataError, match="img0"):
        ds.load_dataset(tmp_path)


def test_empty_scribble_file_for_train_entry(tmp_path):
    _, m = synth_dataset(tmp_path)
    victim = m.ids("train")[0]
    ds.write_scribbles(tmp_path / "scribbles" / f"{victim}.png", ScribbleMap.empty((64, 64)))
    with pytest.raises(DataError, match=victim):
        ds.load_dataset(tmp_path)


def test_alphabet_violation_reports_format_error(tmp_path):
    from PIL import Image

    _, m = synth_dataset(tmp_path)
    bad = np.zeros((64, 64), dtype=np.uint8)
    bad[0, 0] = 77
    Image.fromarray(bad).save(tmp_path / "scribbles" / f"{m.ids('train')[0]}.png")
    with pytest.raises(FormatError, match="77"):
        ds.load_dataset(tmp_path)


def test_instances_from_mask_uses_eight_connectivity():
    m = np.zeros((5, 5), dtype=np.uint8)
    m[1, 1] = m[2, 2] = 1
    m[4, 4] = 1
    assert ds.instances_from_mask(m).max() == 2
