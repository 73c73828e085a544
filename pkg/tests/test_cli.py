import json
import subprocess
import sys
import warnings

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from osvessel.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, _t_grid, main
from osvessel.ndfield import THREADS_ENV, read_field, write_field
from osvessel.phantoms import make_phantom
from osvessel.rasters import load_image, load_mask

SMALL = ["--scales", "1.5,3.0", "--n-orient", "8"]


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", UserWarning)
        yield


def run(*argv):
    return main([str(a) for a in argv])


def test_t_grid_forms():
    assert _t_grid("0.05") == (0.05,)
    assert _t_grid("0.01,0.05") == (0.01, 0.05)
    assert _t_grid("0.01:0.05:0.02") == (0.01, 0.03, 0.05)


def test_bad_flags_exit_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["segment"])
    assert exc.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["phantom", "--kind", "spiral", "-o", "x.png"])
    assert exc.value.code == EXIT_USAGE


def test_invalid_parameters_exit_usage(tmp_path):
    assert run("phantom", "--width", "0", "-o", tmp_path / "p.png") == EXIT_USAGE
    img = tmp_path / "p.png"
    assert run("phantom", "--shape", 64, 64, "-o", img) == EXIT_OK
    assert run("segment", img, "--t", "2", "-o", tmp_path / "m.png") == EXIT_USAGE


def test_missing_input_exit_io(tmp_path):
    assert run("vesselness", tmp_path / "nope.png", "-o", tmp_path / "v.png") == EXIT_IO


def test_ill_posed_reconstruction_exit_numeric(tmp_path, monkeypatch):
    img = tmp_path / "p.png"
    score = tmp_path / "s.ndf"
    assert run("phantom", "--shape", 32, 32, "-o", img) == EXIT_OK
    assert run("score", img, "--n-orient", 6, "-o", score) == EXIT_OK
    import osvessel.cli as cli
    real = cli.os_reconstruct_exact
    monkeypatch.setattr(cli, "os_reconstruct_exact", lambda s: real(s, delta=10.0))
    assert run("reconstruct", score, "-o", tmp_path / "r.png") == EXIT_NUMERIC


def test_score_reconstruct_roundtrip(tmp_path, capsys):
    img = tmp_path / "p.png"
    assert run("phantom", "--shape", 64, 64, "--noise", 0.02, "-o", img) == EXIT_OK
    for flag, name in (([], "s.ndf"), (["--multiscale", "--scales", "2,4"], "ms.ndf")):
        score = tmp_path / name
        assert run("score", img, *flag, "-o", score) == EXIT_OK
        capsys.readouterr()
        assert run("reconstruct", score, "--reference", img, "-o", tmp_path / "r.ndf") == EXIT_OK
        err = float(capsys.readouterr().out.rsplit(" ", 1)[1])
        assert err < 2e-2


def test_phantom_vesselness_segment_pipeline(tmp_path):
    img = tmp_path / "x.png"
    assert run("phantom", "--kind", "x_crossing", "--noise", 0.02, "-o", img) == EXIT_OK
    f = load_image(img)
    np.testing.assert_allclose(f, make_phantom(kind="x_crossing", noise=0.02), atol=1e-4)
    vpng = tmp_path / "v.png"
    assert run("vesselness", img, "--variant", "gauge", "-o", vpng,
               "--dump-eigenvalues", tmp_path / "eig") == EXIT_OK
    V, header = read_field(tmp_path / "v.ndf")
    assert V.shape == (256, 256) and V.max() == pytest.approx(1.0, abs=1e-6)
    lam, _ = read_field(tmp_path / "eig" / "eigenvalues_layer0.ndf")
    assert lam.shape == (3, 12, 256, 256)
    mask_png = tmp_path / "m.png"
    assert run("segment", tmp_path / "v.ndf", "--t", 0.05, "-o", mask_png) == EXIT_OK
    with Image.open(mask_png) as im:
        assert im.mode == "1"
    mask = load_mask(mask_png)
    _, n = ndimage.label(mask, structure=np.ones((3, 3)))
    assert n == 1 and mask[128, 20] and mask[20, 128]


def test_kernels_and_render(tmp_path, capsys):
    out = tmp_path / "k"
    assert run("kernels", "--width", 64, "--height", 64, "-o", out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_orient"] == 12
    assert (out / "stability.png").exists()
    assert run("kernels", "--width", 64, "--height", 64, "--multiscale", "-o", out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["recombination_max_dev"] < 1e-6
    img = tmp_path / "p.png"
    run("phantom", "--shape", 32, 32, "-o", img)
    run("score", img, "--n-orient", 6, "-o", tmp_path / "s.ndf")
    assert run("render", tmp_path / "s.ndf", "--part", "abs", "-o", tmp_path / "m.png") == EXIT_OK
    with Image.open(tmp_path / "m.png") as im:
        assert im.size[0] >= 32 * 3


def test_config_file_is_used(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"segmentation": {"t": 1.0}}))
    V = np.random.default_rng(0).uniform(size=(32, 32))
    write_field(tmp_path / "v.ndf", V)
    assert run("--config", cfg, "segment", tmp_path / "v.ndf", "--tau", 0, "--nu", 0,
               "-o", tmp_path / "m.png") == EXIT_OK
    assert not load_mask(tmp_path / "m.png").any()
    cfg.write_text(json.dumps({"segmentation": {"bogus": 1}}))
    assert run("--config", cfg, "segment", tmp_path / "v.ndf", "-o", tmp_path / "m.png") == EXIT_USAGE


def _tree(root, stems, broken=()):
    for d in ("images", "manual1", "mask"):
        (root / d).mkdir(parents=True, exist_ok=True)
    for k, stem in enumerate(stems):
        f = make_phantom(kind="x_crossing", shape=(96, 96), angle=15.0 * k)
        g = np.round(f * 255).astype(np.uint8)
        Image.fromarray(np.stack([g, g, g], -1)).save(root / "images" / f"{stem}.png")
        if stem in broken:
            continue
        Image.fromarray((f < 0.6).astype(np.uint8) * 255).save(root / "manual1" / f"{stem}.png")
        Image.fromarray(np.full((96, 96), 255, np.uint8)).save(root / "mask" / f"{stem}_mask.png")


def test_evaluate_csv_and_partial_failure(tmp_path, monkeypatch):
    # main() writes the thread count to the environment; let monkeypatch undo it
    monkeypatch.setenv(THREADS_ENV, "1")
    root = tmp_path / "hrf"
    _tree(root, ["01_h", "02_h", "01_g"], broken=("01_g",))
    out = tmp_path / "e.csv"
    common = ["--hrf-root", root, *SMALL, "--gamma", 20, "--tau", 50, "--t-grid", "0.05,0.1"]
    assert run("evaluate", *common, "--group", "h", "-o", out) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "group,t,se_mean,se_std,sp_mean,sp_std,acc_mean,acc_std,n_images"
    assert len(lines) == 3 and lines[1].startswith("healthy,0.05")
    first = out.read_bytes()
    assert run("--threads", 2, "evaluate", *common, "--group", "h", "-o", out) == EXIT_OK
    assert out.read_bytes() == first
    assert run("evaluate", *common, "-o", out) == EXIT_IO
    assert run("evaluate", "--hrf-root", root, "--group", "dr", "-o", out) == EXIT_IO
    assert run("evaluate", "-o", out) == EXIT_USAGE


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "osvessel.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("kernels", "score", "reconstruct", "vesselness", "segment", "evaluate",
                "phantom", "render"):
        assert cmd in res.stdout
