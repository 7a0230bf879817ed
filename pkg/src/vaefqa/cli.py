"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 integrity or crypto
error.  Every command is a pure function of its flags and ``--seed``.
"""

import argparse
import io
import json
import logging
import os
import re
import sys

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from . import dataset, erc, pipeline, plots, quality, secure_store, synthetic
from .tabular import TableError, fmt_float, write_table
from .train import TrainConfig, TrainingDiverged, train
from .vae import ArchDescriptor, VaeModel

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CRYPTO = 0, 1, 2, 3
STORE_ENV = "VAEFQA_STORE_DIR"

log = logging.getLogger("vaefqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _store_dir(args):
    d = os.environ.get(STORE_ENV) or args.store
    if not d:
        raise UsageError(f"no store directory: pass --store or set {STORE_ENV}")
    return d


def _load_model(path):
    with io.open(path, "rb") as fh:
        data = fh.read()
    return ckpt.load_checkpoint(data), ckpt.model_id(data)


def _write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with io.open(path, "wb") as fh:
        fh.write(data)


def _write_text(path, text):
    _write_bytes(path, text.encode("utf-8"))


def cmd_train(args):
    arch = _arch_from_args(args)
    try:
        cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
                          mc_samples=args.L, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = dataset.load_manifest(args.manifest)
    if len(manifest) == 0:
        raise dataset.ManifestError("training manifest has no records")
    X = dataset.load_images(manifest, arch.input_side)
    model = VaeModel.initialize(arch, seed=args.seed)
    model, tlog = train(model, X, cfg)
    data = ckpt.save_checkpoint(model)
    _write_bytes(args.out, data)
    if args.log:
        write_table(args.log, ("epoch", "mean_loss"),
                    [(i + 1, fmt_float(v)) for i, v in enumerate(tlog.epoch_loss)])
    print(f"wrote {args.out} ({model.param_count()} parameters, model id {ckpt.model_id(data)})")


def _arch_from_args(args):
    try:
        if args.arch == "fc":
            return ArchDescriptor.fc(args.side, args.latent, args.widths or (128,))
        widths = args.widths or (16, 32, 64, 128, 256)
        return ArchDescriptor(kind="conv", input_side=args.side, block_count=len(widths),
                              latent_dim=args.latent, widths=widths)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_score(args):
    model, mid = _load_model(args.checkpoint)
    manifest = dataset.load_manifest(args.manifest)
    probes = manifest.probes()
    rows = []
    for i, rec in enumerate(probes):
        img = dataset.preprocess(manifest.resolve(rec), rec.bbox, model.arch.input_side)
        s = quality.score(model, img, L=args.L, seed=args.seed, model_id=mid)
        rows.append([i, rec.path, rec.subject_id, s.value])
    order = quality.order_by_score([r[3] for r in rows])
    rank_of = {idx: pos + 1 for pos, idx in enumerate(order)}
    out = [[i, p, sub, fmt_float(v), rank_of[i], args.L, args.seed, mid] for i, p, sub, v in rows]
    if args.ranked:
        out = [out[i] for i in order]
    write_table(args.out, ("index", "path", "subject_id", "score", "rank", "L", "seed", "model_id"), out)
    print(f"scored {len(out)} probe image(s) -> {args.out}")


def _r_grid(args):
    if not (0 < args.r_step < 1) or not (0 <= args.r_max < 1):
        raise UsageError("--r-step must lie in (0, 1) and --r-max in [0, 1)")
    n = int(np.floor(args.r_max / args.r_step + 1e-9)) + 1
    return np.round(np.arange(n) * args.r_step, 10)


def cmd_erc(args):
    if not 0 < args.f < 1:
        raise UsageError("--f must lie in (0, 1)")
    grid = _r_grid(args)
    table = erc.load_pairs(args.pairs)
    curve = erc.erc_curve(table, args.f, grid)
    perfect = erc.perfect_curve(table, args.f, grid)
    write_table(args.out, ("r", "fnmr", "perfect_fnmr"),
                [(fmt_float(r), fmt_float(v), fmt_float(p))
                 for r, v, p in zip(curve.r, curve.fnmr, perfect.fnmr)])
    if args.svg:
        _write_text(args.svg, plots.erc_svg(curve, perfect, label=args.label))
    area = erc.area_under_erc(curve)
    print(f"N={curve.n} d_t={curve.d_t:.6g} fnmr(0)={curve.fnmr[0]:.4f} area={area:.6f} "
          f"perfect_area={erc.area_under_erc(perfect):.6f}")


_FRAME_RE = re.compile(r"(\d+)")


def _frame_files(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".pgm"):
            continue
        m = _FRAME_RE.findall(stem)
        if not m:
            continue
        fi = int(m[-1])
        if fi in out:
            raise pipeline.PipelineError(f"two frame files map to index {fi}")
        out[fi] = os.path.join(directory, name)
    return out


def cmd_select(args):
    model, mid = _load_model(args.checkpoint)
    pub = secure_store.load_public_key(args.authority_pub)
    store = secure_store.SecureStore(_store_dir(args))
    dets = pipeline.load_detections(args.detections)
    frames = _frame_files(args.frames)
    missing = sorted(set(dets) - set(frames))
    if missing:
        raise pipeline.PipelineError(f"detections reference missing frame(s) {missing[:5]}")
    cfg = pipeline.TrackerConfig(gate_scale=args.gate_scale, max_center_distance=args.max_distance,
                                 max_misses=args.max_misses, clip_window=args.clip_window)
    side = model.arch.input_side

    def scorer(d):
        return quality.score(model, d.crop, L=args.L, seed=args.seed, model_id=mid).value

    tracker = pipeline.Tracker(scorer, cfg)
    stream = []
    for fi in sorted(frames):
        boxes = sorted(dets.get(fi, []))
        if not boxes:
            stream.append((fi, []))
            continue
        raw = dataset.read_image(frames[fi])
        stream.append((fi, [pipeline.Detection(fi, b, dataset.preprocess(raw, b, side)) for b in boxes]))
    events = pipeline.run(tracker, stream)
    for ev in sorted(events, key=lambda e: e.track_id):
        store.seal_and_put(ev.crop, {
            "track_id": ev.track_id, "frame_index": ev.frame_index, "bbox": list(ev.bbox),
            "score": float(ev.score), "model_id": mid, "window": list(ev.window),
            "track_length": ev.track_length,
        }, pub)
    if args.trace:
        rows, traces = [], {}
        for t in sorted(tracker.closed, key=lambda t: t.track_id):
            for k, (d, s) in enumerate(zip(t.detections, t.scores)):
                rows.append([t.track_id, d.frame_index] + [fmt_float(v) for v in d.bbox]
                            + [fmt_float(s), int(k == t.best_index)])
            traces[t.track_id] = ([d.frame_index for d in t.detections], t.scores, t.best_index)
        write_table(args.trace, ("track_id", "frame_index", "x", "y", "w", "h", "score", "best"), rows)
        if args.trace_svg:
            _write_text(args.trace_svg, plots.trace_svg(traces))
    print(f"{len(tracker.closed)} track(s), {len(events)} sealed record(s) in {store.directory}")


def cmd_open(args):
    priv = secure_store.load_private_key(args.authority_key,
                                         args.password.encode() if args.password else None)
    store = secure_store.SecureStore(_store_dir(args))
    ids = [args.record] if args.record else [rid for rid, _ in store.index()]
    os.makedirs(args.out, exist_ok=True)
    for rid in ids:
        try:
            rec = store.get(rid)
        except KeyError:
            raise secure_store.RecordFormatError(f"no record {rid!r} in store") from None
        crop, meta = secure_store.open_record(rec, priv)
        img = Image.fromarray(np.round(np.clip(crop, 0, 1) * 255).astype(np.uint8), mode="L")
        img.save(os.path.join(args.out, rid + ".png"))
        np.save(os.path.join(args.out, rid + ".npy"), crop)
        _write_text(os.path.join(args.out, rid + ".json"), json.dumps(meta, sort_keys=True, indent=2))
    print(f"opened {len(ids)} record(s) into {args.out}")


def cmd_purge(args):
    if args.ttl < 0:
        raise UsageError("--ttl must be >= 0")
    store = secure_store.SecureStore(_store_dir(args))
    n = store.purge(args.ttl, now=args.now)
    print(f"purged {n} record(s); {len(store)} remain")


def cmd_keygen(args):
    pub, priv = secure_store.keygen(args.key_size)
    paths = secure_store.write_keypair(pub, priv, args.out_dir, args.name,
                                       args.password.encode() if args.password else None)
    print(f"public key {paths[0]}\nprivate key {paths[1]} (mode 0600; keep it off the capture device)")


def cmd_synth(args):
    """Write a small synthetic corpus: training crops, scored probes, pairs and a video."""
    rng = np.random.default_rng(args.seed)
    out = args.out
    os.makedirs(os.path.join(out, "train"), exist_ok=True)
    os.makedirs(os.path.join(out, "probes"), exist_ok=True)
    os.makedirs(os.path.join(out, "frames"), exist_ok=True)
    side = args.side

    def save(path, img):
        Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path)

    recs = []
    for i in range(args.n_train):
        p = f"train/{i:05d}.png"
        save(os.path.join(out, p), synthetic.face_blob(rng, side))
        recs.append(dataset.ManifestRecord(p, f"s{i}", "reference"))
    dataset.write_manifest(dataset.Manifest(recs), os.path.join(out, "train.csv"))

    recs = []
    for i in range(args.n_probe):
        clean = synthetic.face_blob(rng, side)
        kind = ("clean", "blur", "noise")[i % 3]
        img = clean if kind == "clean" else (
            synthetic.blur(clean, 2.0) if kind == "blur" else synthetic.add_noise(clean, 0.2, rng))
        p = f"probes/{i:04d}_{kind}.png"
        save(os.path.join(out, p), img)
        recs.append(dataset.ManifestRecord(p, f"p{i}", "probe"))
    dataset.write_manifest(dataset.Manifest(recs), os.path.join(out, "probes.csv"))

    n = 1000
    dist = rng.gamma(4.0, 0.15, size=n)
    qual = -dist + rng.normal(0, 0.15, size=n)
    write_table(os.path.join(out, "pairs.csv"), ("pair_id", "subject_id", "distance", "quality"),
                [(i, f"s{i % 50}", fmt_float(d), fmt_float(q)) for i, (d, q) in enumerate(zip(dist, qual))])

    frames, rows = synthetic.video(rng, n_frames=args.n_frames, side=side)
    for fi, frame in enumerate(frames):
        save(os.path.join(out, "frames", f"{fi:06d}.png"), frame)
    write_table(os.path.join(out, "detections.csv"), ("frame_index", "x", "y", "w", "h"), rows)
    print(f"synthetic corpus written to {out}")


def build_parser():
    p = _Parser(prog="vaefqa", description=__doc__.split("\n")[0],
                epilog="Exit codes: 0 ok, 1 usage, 2 data error, 3 integrity/crypto error.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a VAE on the images of a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--arch", choices=("conv", "fc"), default="conv")
    t.add_argument("--side", type=int, default=64)
    t.add_argument("--latent", type=int, default=64)
    t.add_argument("--widths", type=_int_list, default=None,
                   help="per-block channels (conv) or hidden sizes (fc)")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.005)
    t.add_argument("--batch", type=int, default=144)
    t.add_argument("--L", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="optional per-epoch loss CSV")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="log reconstruction probability of every probe image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--L", type=int, default=10)
    s.add_argument("--seed", type=int, default=0, help="Monte-Carlo seed shared by every image")
    s.add_argument("--ranked", action="store_true", help="write rows best-first")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("erc", help="error-versus-reject curve of a pairs table")
    e.add_argument("--pairs", required=True)
    e.add_argument("--f", type=float, default=0.01, help="initial FNMR")
    e.add_argument("--out", required=True)
    e.add_argument("--svg")
    e.add_argument("--label", default="predictor")
    e.add_argument("--r-step", type=float, default=0.01)
    e.add_argument("--r-max", type=float, default=0.95)
    e.set_defaults(func=cmd_erc)

    k = sub.add_parser("select", help="track faces, keep the best crop per track, seal it")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--frames", required=True, help="directory of numbered PNG/PGM frames")
    k.add_argument("--detections", required=True)
    k.add_argument("--store", help=f"store directory (overridden by ${STORE_ENV})")
    k.add_argument("--authority-pub", required=True)
    k.add_argument("--trace", help="per-detection quality trace CSV")
    k.add_argument("--trace-svg")
    k.add_argument("--L", type=int, default=10)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--gate-scale", type=float, default=0.5)
    k.add_argument("--max-distance", type=float, default=None)
    k.add_argument("--max-misses", type=int, default=10)
    k.add_argument("--clip-window", type=int, default=0)
    k.set_defaults(func=cmd_select)

    o = sub.add_parser("open", help="decrypt stored crops (authority side)")
    o.add_argument("--store")
    o.add_argument("--authority-key", required=True)
    o.add_argument("--password")
    o.add_argument("--record")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_open)

    g = sub.add_parser("purge", help="delete records older than --ttl seconds")
    g.add_argument("--store")
    g.add_argument("--ttl", type=float, required=True)
    g.add_argument("--now", type=float, default=None, help="reference time (default: clock)")
    g.set_defaults(func=cmd_purge)

    kg = sub.add_parser("keygen", help="create an authority keypair")
    kg.add_argument("--out-dir", required=True)
    kg.add_argument("--name", default="authority")
    kg.add_argument("--key-size", type=int, default=3072)
    kg.add_argument("--password")
    kg.set_defaults(func=cmd_keygen)

    sy = sub.add_parser("synth", help="write a synthetic demo corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--side", type=int, default=32)
    sy.add_argument("--n-train", type=int, default=2000)
    sy.add_argument("--n-probe", type=int, default=30)
    sy.add_argument("--n-frames", type=int, default=40)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)
    return p


_DATA_ERRORS = (dataset.ManifestError, dataset.ImageError, erc.ErcError, pipeline.PipelineError,
                ckpt.CheckpointError, TableError, TrainingDiverged, OSError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"vaefqa: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except secure_store.StoreError as exc:
        print(f"vaefqa: integrity error: {exc}", file=sys.stderr)
        return EXIT_CRYPTO
    except _DATA_ERRORS as exc:
        print(f"vaefqa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
