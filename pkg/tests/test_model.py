import dataclasses
import io
import json

import numpy as np
import pytest

from missarf import ForestParams, fit_arf, load_model, log_density, save_model
from missarf.impute import impute_with_model
from missarf.model import FORMAT_VERSION, ModelFormatError

from conftest import mixed_data


@pytest.fixture(scope="module")
def fitted():
    data = mixed_data(120, 0)
    return fit_arf(data, ForestParams(10, 5), rng=3), data


def test_round_trip_is_bit_exact(tmp_path, fitted):
    model, data = fitted
    path = tmp_path / "m.npz"
    save_model(model, path)
    back = load_model(path)
    assert back.fingerprint() == model.fingerprint()
    assert back.schema == model.schema
    assert back.report == model.report
    for obj_a, obj_b in ((model.forest, back.forest), (model.density, back.density)):
        for f in dataclasses.fields(obj_a):
            a, b = getattr(obj_a, f.name), getattr(obj_b, f.name)
            if isinstance(a, np.ndarray):
                assert a.dtype == b.dtype and np.array_equal(a, b, equal_nan=True), f.name
    # same imputations and densities from the reloaded model
    x = impute_with_model(model, data, "multiple", 2, key=4)
    y = impute_with_model(back, data, "multiple", 2, key=4)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(x, y))
    row = np.array([0.1, 0.2, 1.0])
    assert log_density(model.density, row) == log_density(back.density, row)
    # saving again gives the same bytes
    save_model(back, tmp_path / "m2.npz")
    assert (tmp_path / "m2.npz").read_bytes() == path.read_bytes()


def test_fingerprint_tracks_content(fitted):
    model, _ = fitted
    other = fit_arf(mixed_data(120, 0), ForestParams(10, 5), rng=4)
    assert other.fingerprint() != model.fingerprint()


def _rewrite_meta(src, dst, **changes):
    with np.load(src) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays["meta"].tobytes())
    meta.update(changes)
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    dst.write_bytes(buf.getvalue())


def test_unsupported_version_is_rejected(tmp_path, fitted):
    model, _ = fitted
    save_model(model, tmp_path / "m.npz")
    _rewrite_meta(tmp_path / "m.npz", tmp_path / "v.npz", format_version=FORMAT_VERSION + 1)
    with pytest.raises(ModelFormatError, match="version"):
        load_model(tmp_path / "v.npz")
    _rewrite_meta(tmp_path / "m.npz", tmp_path / "f.npz", format="something-else")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "f.npz")


def test_garbage_file_is_rejected(tmp_path):
    p = tmp_path / "x.npz"
    p.write_text("not a model")
    with pytest.raises(ModelFormatError):
        load_model(p)
