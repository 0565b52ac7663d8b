"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 data error, 3 grid fingerprint mismatch,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._version import __version__
from .engine import EngineError, render_offline, write_wav
from .fields import NODE_FORMAT_VERSION, FieldError, PlaneWaveSpec, plane_wave_ir, read_node_signals, \
    write_node_signals
from .grids import GRID_FORMAT_VERSION, GridError, aliasing_frequency, default_max_order, make_grid, read_grid, \
    write_grid
from .groundtruth import SDM_FORMAT_VERSION, GroundTruthError, field_from_sdm, read_sdm, sabine_absorption, \
    synth_shoebox, write_sdm
from .hrtf import HRTF_FORMAT_VERSION, HrtfError, fibonacci_directions, fit_magls, load_hrtf, save_hrtf, sphere_hrtf
from .metrics import fractional_octave_smooth, to_db
from .renderers import (DEFAULT_DIRECT_REG, DEFAULT_TAPS, RENDERER_FORMAT_VERSION, FingerprintMismatch,
                        RendererError, design_ambisonic, design_direct, design_eq_filter, read_renderer,
                        write_renderer)
from .sht import DEFAULT_REG, DecompositionError, RegProfile, decomposition_matrix

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONSISTENCY, EXIT_VERIFY = 0, 1, 2, 3, 4
REPORT_VERSION = 1
DATA_ERRORS = (GridError, FieldError, HrtfError, RendererError, GroundTruthError, DecompositionError,
               EngineError, OSError, KeyError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version_text():
    return (f"sfbinaural {__version__} (grid format {GRID_FORMAT_VERSION}, node signals {NODE_FORMAT_VERSION}, "
            f"hrtf {HRTF_FORMAT_VERSION}, renderer {RENDERER_FORMAT_VERSION}, sdm {SDM_FORMAT_VERSION}, "
            f"verify report {REPORT_VERSION})")


def _float_list(text):
    try:
        vals = [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    return vals


def _created(args):
    stamp = getattr(args, "created", None) or os.environ.get("SOURCE_DATE_EPOCH")
    if stamp and stamp.isdigit():
        return _dt.datetime.fromtimestamp(int(stamp), _dt.timezone.utc).isoformat()
    return stamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- commands

def cmd_grid(args):
    grid = make_grid(args.type, args.nodes, args.size_m)
    order = grid.max_order
    write_grid(args.out, grid)
    print(f"{grid.family.short}-{grid.n_nodes}: size {grid.size_m:g} m, max_order {order}, "
          f"f_a {aliasing_frequency(order, grid.radius):.0f} Hz -> {args.out}")
    return EXIT_OK


def cmd_hrtf_sphere(args):
    dirs = fibonacci_directions(args.directions)
    h = sphere_hrtf(args.radius, (args.left_ear, args.right_ear), dirs, args.fs, args.length)
    save_hrtf(args.out, h)
    print(f"sphere HRTF set: {h.n_directions} directions, {h.length} taps at {h.sample_rate:g} Hz -> {args.out}")
    return EXIT_OK


def cmd_room(args):
    absorption = args.absorption
    if absorption is None:
        absorption = sabine_absorption(args.dims, args.t60)
        if not 0 < absorption <= 1:
            raise ValueError(f"T60 {args.t60} s is not reachable in this room (alpha = {absorption:.3f})")
    length = None if args.duration is None else int(round(args.duration * args.fs))
    r = synth_shoebox(args.dims, args.source, args.receiver, absorption, args.order, args.fs, length)
    write_sdm(args.out, r)
    print(f"shoebox SDM response: {r.length} samples, alpha {absorption:.4f} -> {args.out}")
    return EXIT_OK


def cmd_synth(args):
    grid = read_grid(args.grid)
    if args.sdm:
        sig = field_from_sdm(read_sdm(args.sdm), grid)
    else:
        spec = PlaneWaveSpec(math.radians(args.azimuth), math.radians(args.elevation))
        sig = plane_wave_ir(spec, grid, args.fs, args.length)
    write_node_signals(args.out, sig, grid_path=args.grid)
    print(f"node signals: {sig.stacked().shape[0]} channels x {sig.length} samples -> {args.out}")
    return EXIT_OK


def _load_reg(path, default=DEFAULT_REG):
    return default if path is None else RegProfile.load(path)


def cmd_design(args):
    grid = read_grid(args.grid)
    hrtf = load_hrtf(args.hrtf)
    if abs(hrtf.sample_rate - args.fs) > 1e-9:
        raise HrtfError(f"HRTF sample rate {hrtf.sample_rate:g} Hz differs from --fs {args.fs:g} Hz "
                        "(resampling is not supported)")
    reg = _load_reg(args.reg_profile, DEFAULT_REG if args.method == "ambisonic" else DEFAULT_DIRECT_REG)
    taps = args.taps
    n_fft = taps
    if hrtf.length > n_fft:
        raise RendererError(f"--taps {taps} shorter than the HRIRs ({hrtf.length})")
    if args.method == "ambisonic":
        order = args.order if args.order is not None else grid.max_order
        freqs = np.fft.rfftfreq(n_fft, 1.0 / args.fs)
        D = decomposition_matrix(grid, order, freqs, reg, force=args.force)
        hs = fit_magls(hrtf, order, args.f_transition, n_fft=n_fft)
        eq = None if args.no_eq else design_eq_filter(grid, order, D, hs, taps=taps, hrtf=hrtf)
        r = design_ambisonic(grid, order, hs, D, eq, taps=taps, latency=args.latency)
        if args.no_rotation:
            # the per-bin decomposition is (K, (N+1)^2, L) and dominates the container size
            r = replace(r, decoder=None, decomposition=None)
    else:
        if args.order is not None:
            raise UsageError("--order applies to ambisonic designs only")
        r = design_direct(grid, hrtf, f_transition=args.f_transition, reg=reg, n_fft=n_fft, taps=taps,
                          latency=args.latency)
    r.metadata["created"] = _created(args)
    write_renderer(args.out, r)
    extra = f", order {r.order} ({(r.order + 1) ** 2} SH channels)" if r.order is not None else ""
    print(f"{r.kind} renderer: {r.n_inputs} inputs -> 2 ears, {r.taps} taps, latency {r.latency_samples}"
          f"{extra} -> {args.out}")
    return EXIT_OK


def _rotation_args(args):
    return tuple(math.radians(v or 0.0) for v in (args.yaw, args.pitch, args.roll))


def cmd_render(args):
    r = read_renderer(args.renderer)
    rot = _rotation_args(args)
    if any(v is not None for v in (args.yaw, args.pitch, args.roll)):
        if r.kind != "ambisonic":
            raise UsageError("rotation flags are only valid for ambisonic renderers")
        if r.decomposition is None:
            raise UsageError("renderer was designed with --no-rotation; rotation flags are unavailable")
        r = r.rotated(*rot)
    sig = read_node_signals(args.input)
    out = render_offline(r, sig, block=args.block, force=args.force)
    write_wav(args.out, out, r.sample_rate)
    print(f"rendered {out.shape[1]} samples -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ verify

@dataclass
class VerifyReport:
    rows: list = field(default_factory=list)  # (az, el, ear, f, truth_db, rendered_db, error_db)
    summary: list = field(default_factory=list)  # (az, el, metric, value)
    f_alias: float = float("nan")
    f_lo: float = 100.0

    def direction_metrics(self, az, el):
        errs = np.array([(r[3], r[6]) for r in self.rows if r[0] == az and r[1] == el])
        f, e = errs[:, 0], errs[:, 1]
        low = (f >= self.f_lo) & (f <= 0.8 * self.f_alias)
        high = f > self.f_alias
        rms = lambda x: float(np.sqrt(np.mean(x**2))) if x.size else float("nan")  # noqa: E731
        return rms(e[low]), rms(e[high])

    def check(self, tol=1e-9):
        """Summary rows must be recomputable from the per-bin rows."""
        for az, el, metric, value in self.summary:
            if metric == "f_a_hz":
                ok = abs(value - self.f_alias) <= tol * max(1.0, abs(value))
            else:
                lo, hi = self.direction_metrics(az, el)
                ref = lo if metric == "rms_error_db_below_0.8fa" else hi
                ok = (math.isnan(ref) and math.isnan(value)) or abs(ref - value) <= tol * max(1.0, abs(ref))
            if not ok:
                raise ValueError(f"summary row {metric} for ({az}, {el}) does not match the data rows")

    def write(self, path):
        self.check()
        with open(path, "w", newline="") as fh:
            fh.write(f"# sfbinaural verify report v{REPORT_VERSION}; magnitudes 1/3-octave smoothed\n")
            w = csv.writer(fh)
            w.writerow(["kind", "azimuth_deg", "elevation_deg", "ear", "freq_hz", "truth_db", "rendered_db",
                        "error_db", "metric", "value"])
            for az, el, ear, f, t, r, e in self.rows:
                w.writerow(["bin", az, el, ear, f"{f:.6g}", f"{t:.6f}", f"{r:.6f}", f"{e:.6f}", "", ""])
            for az, el, metric, value in self.summary:
                w.writerow(["summary", az, el, "both", "", "", "", "", metric, repr(float(value))])


def cmd_verify(args):
    if not args.azimuths:
        raise UsageError("at least one azimuth is required")
    els = args.elevations or [0.0]
    if len(els) == 1:
        els = els * len(args.azimuths)
    if len(els) != len(args.azimuths):
        raise UsageError("--elevations must have one value or as many as --azimuths")
    r = read_renderer(args.renderer)
    grid = read_grid(args.grid)
    r.check_grid(grid.fingerprint(), args.force)
    hrtf = load_hrtf(args.hrtf)
    if abs(hrtf.sample_rate - r.sample_rate) > 1e-9:
        raise HrtfError(f"HRTF sample rate {hrtf.sample_rate:g} Hz differs from the renderer's {r.sample_rate:g} Hz")
    fs = r.sample_rate
    f_alias = float(r.metadata.get("aliasing_frequency", aliasing_frequency(default_max_order(grid), grid.radius)))
    rep = VerifyReport(f_alias=f_alias)
    n_in = max(args.length, 256)
    failed = []
    for az, el in zip(args.azimuths, els):
        spec = PlaneWaveSpec(math.radians(az), math.radians(el))
        # centred pulse: the periodic band-limited impulse then has no sinc tail wrapped to the end
        sig = plane_wave_ir(spec, grid, fs, n_in, predelay_samples=n_in // 2)
        out = render_offline(r, sig, block=args.block, force=args.force)
        n_fft = 1 << int(math.ceil(math.log2(max(out.shape[1], hrtf.length))))
        freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
        rendered = np.fft.rfft(out, n=n_fft, axis=1)
        q = int(hrtf.nearest(spec.incidence)[0])
        truth = np.fft.rfft(np.stack([hrtf.left[q], hrtf.right[q]]).astype(np.float64), n=n_fft, axis=1)
        t_db = to_db(fractional_octave_smooth(freqs, truth))
        r_db = to_db(fractional_octave_smooth(freqs, rendered))
        for e, ear in enumerate(("left", "right")):
            for k in range(1, freqs.size):
                rep.rows.append((az, el, ear, float(freqs[k]), float(t_db[e, k]), float(r_db[e, k]),
                                 float(r_db[e, k] - t_db[e, k])))
        lo, hi = rep.direction_metrics(az, el)
        rep.summary += [(az, el, "rms_error_db_below_0.8fa", lo), (az, el, "rms_error_db_above_fa", hi),
                        (az, el, "f_a_hz", f_alias)]
        status = "ok" if lo <= args.tol_db else "FAIL"
        if lo > args.tol_db:
            failed.append((az, el))
        print(f"az {az:g} el {el:g}: {lo:.2f} dB RMS below 0.8 f_a, {hi:.2f} dB above f_a [{status}]")
    rep.write(args.out)
    if failed:
        print(f"verification failed for {len(failed)} direction(s) at tolerance {args.tol_db:g} dB", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sfbinaural", description="Binaural rendering of sampled sound fields.")
    p.add_argument("--version", action="version", version=_version_text())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("grid", help="create a sampling grid")
    g.add_argument("--type", required=True, choices=["cv", "cs", "ss"])
    g.add_argument("--nodes", required=True, type=int)
    g.add_argument("--size-m", type=float, default=0.14)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_grid)

    h = sub.add_parser("hrtf", help="HRTF utilities")
    hs = h.add_subparsers(dest="hrtf_command", required=True, parser_class=_Parser)
    sp = hs.add_parser("sphere", help="write a rigid-sphere HRTF set")
    sp.add_argument("--out", required=True)
    sp.add_argument("--radius", type=float, default=0.0875)
    sp.add_argument("--left-ear", type=float, default=100.0, help="ear azimuth in degrees")
    sp.add_argument("--right-ear", type=float, default=-100.0)
    sp.add_argument("--directions", type=int, default=2702)
    sp.add_argument("--fs", type=float, default=48000.0)
    sp.add_argument("--length", type=int, default=256)
    sp.set_defaults(func=cmd_hrtf_sphere)

    rm = sub.add_parser("room", help="shoebox SDM response")
    rm.add_argument("--dims", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    rm.add_argument("--source", type=float, nargs=3, required=True)
    rm.add_argument("--receiver", type=float, nargs=3, required=True)
    ab = rm.add_mutually_exclusive_group(required=True)
    ab.add_argument("--absorption", type=float)
    ab.add_argument("--t60", type=float, help="choose absorption by Sabine's formula")
    rm.add_argument("--order", type=int, default=30)
    rm.add_argument("--duration", type=float, help="seconds (default: until the last image)")
    rm.add_argument("--fs", type=float, default=48000.0)
    rm.add_argument("--out", required=True)
    rm.set_defaults(func=cmd_room)

    sy = sub.add_parser("synth", help="synthesise node signals")
    sy.add_argument("--grid", required=True)
    src = sy.add_mutually_exclusive_group(required=True)
    src.add_argument("--azimuth", type=float, help="plane-wave incidence azimuth (deg)")
    src.add_argument("--sdm", help="SDM response file")
    sy.add_argument("--elevation", type=float, default=0.0)
    sy.add_argument("--fs", type=float, default=48000.0)
    sy.add_argument("--length", type=int, default=1024)
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=cmd_synth)

    d = sub.add_parser("design", help="design a renderer")
    d.add_argument("method", choices=["ambisonic", "direct"])
    d.add_argument("--grid", required=True)
    d.add_argument("--hrtf", required=True)
    d.add_argument("--order", type=int)
    d.add_argument("--fs", type=float, default=48000.0)
    d.add_argument("--taps", type=int, default=DEFAULT_TAPS)
    d.add_argument("--latency", type=int, help="default: taps / 2")
    d.add_argument("--reg-profile", help="JSON file with regularisation points")
    d.add_argument("--f-transition", type=float)
    d.add_argument("--no-eq", action="store_true")
    d.add_argument("--no-rotation", action="store_true",
                   help="ambisonic: omit the data needed for --yaw/--pitch/--roll (much smaller file)")
    d.add_argument("--force", action="store_true", help="allow orders beyond the grid capability")
    d.add_argument("--created", help="timestamp stamped into the metadata")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_design)

    r = sub.add_parser("render", help="render node signals to a stereo file")
    r.add_argument("--renderer", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--yaw", type=float)
    r.add_argument("--pitch", type=float)
    r.add_argument("--roll", type=float)
    r.add_argument("--block", type=int, default=512)
    r.add_argument("--force", action="store_true", help="ignore grid fingerprint mismatches")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("verify", help="compare rendered plane waves against the HRTF set")
    v.add_argument("--renderer", required=True)
    v.add_argument("--grid", required=True)
    v.add_argument("--hrtf", required=True)
    v.add_argument("--azimuths", type=_float_list, required=True)
    v.add_argument("--elevations", type=_float_list, default=None)
    v.add_argument("--tol-db", type=float, default=1.0)
    v.add_argument("--length", type=int, default=512)
    v.add_argument("--block", type=int, default=512)
    v.add_argument("--force", action="store_true")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sfbinaural: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatch as exc:
        print(f"sfbinaural: {exc}", file=sys.stderr)
        print(f"  expected: {exc.expected}\n  found:    {exc.found}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except DATA_ERRORS as exc:
        print(f"sfbinaural: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
