import csv
import json

import numpy as np
import pytest
from scipy.io import wavfile

from sfbinaural.cli import EXIT_CONSISTENCY, EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from sfbinaural.grids import read_grid
from sfbinaural.renderers import read_renderer


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Small end-to-end setup: SS-36 grid, sphere HRTFs, ambisonic renderer, frontal input."""
    d = tmp_path_factory.mktemp("cli")
    assert run("grid", "--type", "ss", "--nodes", 36, "--out", d / "ss36.json") == EXIT_OK
    assert run("hrtf", "sphere", "--out", d / "hrtf", "--directions", 400, "--length", 128) == EXIT_OK
    assert run("design", "ambisonic", "--grid", d / "ss36.json", "--hrtf", d / "hrtf", "--taps", 512,
               "--created", "0", "--out", d / "amb.bin") == EXIT_OK
    assert run("synth", "--grid", d / "ss36.json", "--azimuth", 0, "--length", 256, "--out", d / "front.npz") == 0
    return d


def test_grid_ss400(tmp_path, capsys):
    assert run("grid", "--type", "ss", "--nodes", 400, "--size-m", 0.14, "--out", tmp_path / "g.json") == EXIT_OK
    g = read_grid(tmp_path / "g.json")
    assert g.max_order == 18 and g.n_nodes == 400
    assert "max_order 18" in capsys.readouterr().out


def test_grid_not_a_cube(tmp_path, capsys):
    assert run("grid", "--type", "cv", "--nodes", 26, "--out", tmp_path / "g.json") == EXIT_DATA
    assert "cube" in capsys.readouterr().err
    assert not (tmp_path / "g.json").exists()


def test_grid_cs98_on_hull(tmp_path):
    assert run("grid", "--type", "cs", "--nodes", 98, "--size-m", 0.14, "--out", tmp_path / "g.json") == EXIT_OK
    g = read_grid(tmp_path / "g.json")
    assert g.n_nodes == 98 and g.max_order == 7
    assert np.all(np.isclose(np.abs(g.nodes).max(axis=1), 0.07, atol=1e-12))


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("grid", "--type", "xx", "--nodes", 5, "--out", tmp_path / "g")
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == EXIT_USAGE


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for word in ("grid format", "node signals", "hrtf", "renderer", "sdm", "verify report"):
        assert word in out


def test_design_metadata_and_determinism(work, tmp_path):
    r = read_renderer(work / "amb.bin")
    assert r.kind == "ambisonic" and r.order == 4 and r.decoder.shape[2] == 25
    for key in ("taps", "latency_samples", "sample_rate", "regularization", "created", "eq_fir"):
        assert key in r.metadata
    assert run("design", "ambisonic", "--grid", work / "ss36.json", "--hrtf", work / "hrtf", "--taps", 512,
               "--created", "0", "--out", tmp_path / "again.bin") == EXIT_OK
    assert (tmp_path / "again.bin").read_bytes() == (work / "amb.bin").read_bytes()


def test_design_order_guard(work, tmp_path, capsys):
    code = run("design", "ambisonic", "--grid", work / "ss36.json", "--hrtf", work / "hrtf", "--order", 6,
               "--taps", 512, "--out", tmp_path / "x.bin")
    assert code == EXIT_DATA
    assert not (tmp_path / "x.bin").exists()


def test_design_sample_rate_mismatch(work, tmp_path):
    code = run("design", "ambisonic", "--grid", work / "ss36.json", "--hrtf", work / "hrtf", "--fs", 44100,
               "--taps", 512, "--out", tmp_path / "x.bin")
    assert code == EXIT_DATA


def test_render_yaw_zero_bit_identical(work, tmp_path):
    assert run("render", "--renderer", work / "amb.bin", "--input", work / "front.npz",
               "--out", tmp_path / "a.wav") == EXIT_OK
    assert run("render", "--renderer", work / "amb.bin", "--input", work / "front.npz", "--yaw", 0,
               "--out", tmp_path / "b.wav") == EXIT_OK
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
    rate, data = wavfile.read(tmp_path / "a.wav")
    assert rate == 48000 and data.shape == (256 + 512 - 1, 2)


def test_render_rotation_equivariance(work, tmp_path):
    assert run("synth", "--grid", work / "ss36.json", "--azimuth", 90, "--length", 256,
               "--out", tmp_path / "left.npz") == EXIT_OK
    assert run("render", "--renderer", work / "amb.bin", "--input", work / "front.npz", "--yaw", 90,
               "--out", tmp_path / "rot.wav") == EXIT_OK
    assert run("render", "--renderer", work / "amb.bin", "--input", tmp_path / "left.npz",
               "--out", tmp_path / "ref.wav") == EXIT_OK
    a = wavfile.read(tmp_path / "rot.wav")[1].T.astype(float)
    b = wavfile.read(tmp_path / "ref.wav")[1].T.astype(float)
    A, B = np.fft.rfft(a, axis=1), np.fft.rfft(b, axis=1)
    freqs = np.fft.rfftfreq(a.shape[1], 1 / 48000)
    f_a = read_renderer(work / "amb.bin").metadata["aliasing_frequency"]
    # the 256-sample inputs truncate each node's fractional-delay tail differently per direction,
    # so end to end only a coarse bound applies; the exact per-bin check is in test_renderers
    band = freqs < f_a / 2
    assert np.abs(A[:, band] - B[:, band]).max() <= 0.1 * np.abs(B).max()


def test_render_fingerprint_mismatch(work, tmp_path, capsys):
    assert run("grid", "--type", "ss", "--nodes", 49, "--out", tmp_path / "other.json") == EXIT_OK
    assert run("synth", "--grid", tmp_path / "other.json", "--azimuth", 0, "--length", 256,
               "--out", tmp_path / "other.npz") == EXIT_OK
    code = run("render", "--renderer", work / "amb.bin", "--input", tmp_path / "other.npz",
               "--out", tmp_path / "x.wav")
    assert code == EXIT_CONSISTENCY
    err = capsys.readouterr().err
    r = read_renderer(work / "amb.bin")
    assert r.grid_fingerprint in err and read_grid(tmp_path / "other.json").fingerprint() in err


def test_direct_design_rejects_rotation(work, tmp_path, capsys):
    assert run("grid", "--type", "cs", "--nodes", 26, "--out", tmp_path / "cs26.json") == EXIT_OK
    assert run("design", "direct", "--grid", tmp_path / "cs26.json", "--hrtf", work / "hrtf", "--taps", 512,
               "--out", tmp_path / "dir.bin") == EXIT_OK
    r = read_renderer(tmp_path / "dir.bin")
    assert r.kind == "direct" and r.fir.shape == (2, 52, 512)
    assert run("synth", "--grid", tmp_path / "cs26.json", "--azimuth", 0, "--length", 256,
               "--out", tmp_path / "in.npz") == EXIT_OK
    code = run("render", "--renderer", tmp_path / "dir.bin", "--input", tmp_path / "in.npz", "--yaw", 10,
               "--out", tmp_path / "x.wav")
    assert code == EXIT_USAGE
    assert run("render", "--renderer", tmp_path / "dir.bin", "--input", tmp_path / "in.npz",
               "--out", tmp_path / "x.wav") == EXIT_OK


def test_design_without_rotation_data(work, tmp_path):
    assert run("design", "ambisonic", "--grid", work / "ss36.json", "--hrtf", work / "hrtf", "--taps", 512,
               "--created", "0", "--no-rotation", "--out", tmp_path / "small.bin") == EXIT_OK
    small, full = read_renderer(tmp_path / "small.bin"), read_renderer(work / "amb.bin")
    assert small.decomposition is None and np.array_equal(small.fir, full.fir)
    assert (tmp_path / "small.bin").stat().st_size < (work / "amb.bin").stat().st_size
    assert run("render", "--renderer", tmp_path / "small.bin", "--input", work / "front.npz", "--yaw", 10,
               "--out", tmp_path / "x.wav") == EXIT_USAGE
    assert run("render", "--renderer", tmp_path / "small.bin", "--input", work / "front.npz",
               "--out", tmp_path / "x.wav") == EXIT_OK


def test_verify_pass_and_report(work, tmp_path):
    code = run("verify", "--renderer", work / "amb.bin", "--grid", work / "ss36.json", "--hrtf", work / "hrtf",
               "--azimuths", "0", "--tol-db", 3, "--out", tmp_path / "rep.csv")
    assert code == EXIT_OK
    lines = (tmp_path / "rep.csv").read_text().splitlines()
    assert lines[0].startswith("# sfbinaural verify report v1")
    rows = list(csv.DictReader(lines[1:]))
    summary = [r for r in rows if r["kind"] == "summary"]
    assert {r["metric"] for r in summary} == {"rms_error_db_below_0.8fa", "rms_error_db_above_fa", "f_a_hz"}
    bins = [r for r in rows if r["kind"] == "bin"]
    assert {r["ear"] for r in bins} == {"left", "right"}


def test_verify_failure_exit_code(work, tmp_path):
    code = run("verify", "--renderer", work / "amb.bin", "--grid", work / "ss36.json", "--hrtf", work / "hrtf",
               "--azimuths", "0,90", "--tol-db", 1e-6, "--out", tmp_path / "rep.csv")
    assert code == EXIT_VERIFY
    assert (tmp_path / "rep.csv").exists()


def test_verify_low_density_fails(work, tmp_path):
    assert run("grid", "--type", "ss", "--nodes", 25, "--out", tmp_path / "ss25.json") == EXIT_OK
    assert run("design", "ambisonic", "--grid", tmp_path / "ss25.json", "--hrtf", work / "hrtf", "--taps", 512,
               "--out", tmp_path / "amb25.bin") == EXIT_OK
    code = run("verify", "--renderer", tmp_path / "amb25.bin", "--grid", tmp_path / "ss25.json",
               "--hrtf", work / "hrtf", "--azimuths", "90", "--out", tmp_path / "rep.csv")
    assert code == EXIT_VERIFY


def test_verify_empty_directions(work, tmp_path, capsys):
    code = run("verify", "--renderer", work / "amb.bin", "--grid", work / "ss36.json", "--hrtf", work / "hrtf",
               "--azimuths", "", "--out", tmp_path / "rep.csv")
    assert code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_room_and_sdm_synth(work, tmp_path):
    assert run("room", "--dims", 4, 5, 3, "--source", 1.1, 1.3, 1.2, "--receiver", 2.5, 3, 1.6, "--t60", 1.0,
               "--order", 3, "--duration", 0.05, "--out", tmp_path / "r.sdm") == EXIT_OK
    assert run("synth", "--grid", work / "ss36.json", "--sdm", tmp_path / "r.sdm",
               "--out", tmp_path / "room.npz") == EXIT_OK
    assert run("render", "--renderer", work / "amb.bin", "--input", tmp_path / "room.npz",
               "--out", tmp_path / "room.wav") == EXIT_OK
    assert run("room", "--dims", 4, 5, 3, "--source", 1, 1, 1, "--receiver", 2, 2, 2, "--t60", 0.01,
               "--out", tmp_path / "x.sdm") == EXIT_DATA


def test_reg_profile_file(work, tmp_path):
    (tmp_path / "reg.json").write_text(json.dumps({"points": [[100, 30], [3000, 50]]}))
    assert run("design", "ambisonic", "--grid", work / "ss36.json", "--hrtf", work / "hrtf", "--taps", 512,
               "--no-eq", "--reg-profile", tmp_path / "reg.json", "--out", tmp_path / "r.bin") == EXIT_OK
    r = read_renderer(tmp_path / "r.bin")
    assert r.metadata["regularization"]["points"] == [[100.0, 30.0], [3000.0, 50.0]]
    assert r.metadata["eq_fir"] is None
