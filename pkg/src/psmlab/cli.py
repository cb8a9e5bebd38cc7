"""Command-line front end: ``psmlab {reference,train,sample,eval,check}``.

Every command writes ``manifest_<command>.json`` into the output directory
before it starts computing and marks it complete at the end, so an
interrupted run leaves a record. Artifacts carry JSON sidecars that point at
their inputs by path and SHA-256, which lets the chain reference, split,
train, sample and eval be rebuilt from the sidecars alone.
"""
import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig
from .data_io import (
    TrajectoryDataset,
    make_split,
    read_npz,
    read_samples_csv,
    read_sidecar,
    write_npz,
    write_samples_csv,
    write_sidecar,
)
from .errors import ConfigError, DataError, NumericalError, PSMLabError
from .metrics import (
    SampleSet,
    bonds_from_frame,
    coordinate_hist,
    default_distance_edges,
    energy_hist,
    histogram_from_values,
    interatomic_hist,
    mae_hist,
    sample_energies,
    stable_fraction,
    tvd,
    wasserstein2,
    wasserstein2_1d,
)
from .net import AdamState, ScoreNet, gradient_check, load_checkpoint, save_checkpoint
from .potential import GaussianWell, LennardJonesCluster, QuarticToy, check_force_consistency, lattice_cluster, random_configuration
from .sampler import LowAcceptanceWarning, mala_sample, net_score_fn, sample
from .train import train_run

log = logging.getLogger("psmlab")

REFERENCE = "reference.npz"
TRAIN_SPLIT = "train_split.npz"
MODEL = "model.ckpt"
LAST = "last.ckpt"
LOSS_CSV = "loss.csv"
SAMPLES = "samples.csv"
METRICS = "metrics.json"
CHECK_REPORT = "check_report.json"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_array(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()


class Manifest:
    """Run record written before compute starts and completed afterwards."""

    def __init__(self, out, command, cfg, inputs=None):
        self.path = Path(out) / f"manifest_{command}.json"
        self.doc = {
            "command": command,
            "code_version": __version__,
            "config": cfg.to_dict(),
            "config_hash": cfg.full_hash(),
            "model_hash": cfg.model_hash(),
            "inputs": inputs or {},
            "outputs": {},
            "status": "started",
        }
        self._write()

    def _write(self):
        with open(self.path, "w") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)

    def finish(self, outputs, **extra):
        self.doc["outputs"] = outputs
        self.doc["status"] = "complete"
        self.doc.update(extra)
        self._write()


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _zero_com(n_particles):
    # pair potentials are translation invariant, so centroid motion is projected out
    return n_particles > 1


def _reference_path(cfg, out):
    ds = cfg.doc["dataset"]
    if ds is not None:
        return Path(ds["path"] if isinstance(ds, dict) else ds)
    return out / REFERENCE


def _kT(cfg):
    ds = cfg.doc["dataset"]
    if isinstance(ds, dict) and "kT" in ds:
        return float(ds["kT"])
    system = cfg.system()
    return system.kT if system is not None else 1.0


def _load_reference(cfg, out):
    path = _reference_path(cfg, out)
    if not path.exists():
        raise DataError(f"reference data {path} not found; run 'psmlab reference' or set 'dataset'")
    return path, read_npz(path)


def _mala_init(system, cfg):
    if cfg.doc["mala"].get("init") is not None:
        return cfg.doc["mala"]["init"]
    if isinstance(system, LennardJonesCluster):
        return lattice_cluster(system.n_particles, spacing=system.r_m).reshape(-1).tolist()
    if isinstance(system, GaussianWell):
        return [system.mean] * system.dim
    return None


def cmd_reference(cfg, args):
    system = cfg.system()
    if system is None:
        raise ConfigError("'reference' needs an analytic system; this config only names a dataset")
    out = _out_dir(cfg)
    manifest = Manifest(out, "reference", cfg)
    zero_com = _zero_com(system.n_particles)
    mcfg = cfg.mala_config(zero_com=zero_com)
    mcfg.init = _mala_init(system, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", LowAcceptanceWarning)
        res = mala_sample(system, mcfg)
    low = [str(w.message) for w in caught if issubclass(w.category, LowAcceptanceWarning)]
    for msg in low:
        log.warning(msg)
    n, sd = system.n_particles, system.spatial_dim
    shape = (len(res.positions), n, sd)
    ds = TrajectoryDataset(res.positions.reshape(shape), res.forces.reshape(shape), res.energies)
    path = out / REFERENCE
    write_npz(ds, path)
    write_sidecar(
        path,
        {"kind": "reference", "system": system.to_dict(), "mala": mcfg.to_dict(), "acceptance_rate": res.acceptance_rate, "seed": cfg.seed},
    )
    manifest.finish({"reference": str(path)}, acceptance_rate=res.acceptance_rate, warnings=low)
    print(f"wrote {len(ds)} frames to {path} (acceptance {res.acceptance_rate:.3f})")
    if low and args.strict:
        return NumericalError.exit_code
    return 0


def _build_net(cfg, dim):
    section = cfg.doc["net"]
    try:
        return ScoreNet(dim, section["hidden_dims"], section["time_embed_dim"], seed=cfg.seed)
    except KeyError as exc:
        raise ConfigError(f"'net' section lacks {exc}") from exc


def _start_loss_csv(path, keep_before=0):
    """Fresh ``epoch,loss`` file, keeping earlier rows when a run resumes at ``keep_before``."""
    rows = []
    if keep_before > 0 and path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in list(csv.reader(fh))[1:] if int(r[0]) < keep_before]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows(rows)


def cmd_train(cfg, args):
    out = _out_dir(cfg)
    ref_path, ref = _load_reference(cfg, out)
    loss = cfg.loss()
    if loss.needs_forces and ref.forces is None:
        raise ConfigError(
            f"loss variant {loss.variant} regresses onto force labels, but {ref_path} has no forces; "
            "use variant DSM or supply a dataset with an F array"
        )
    split = cfg.split_spec()
    train_ds, _ = make_split(ref, split)
    if len(train_ds) == 0:
        raise DataError("the split leaves no training frames")
    split_path = out / TRAIN_SPLIT
    write_npz(train_ds, split_path)
    write_sidecar(split_path, {"kind": "split", "source": str(ref_path), "source_sha256": sha256_file(ref_path), "split": split.to_dict()})

    n, sd = ref.n_particles, ref.spatial_dim
    tcfg = cfg.train_config(spatial_dim=sd, zero_com=_zero_com(n))
    inputs = {"train_split": str(split_path), "train_split_sha256": sha256_file(split_path)}
    manifest = Manifest(out, "train", cfg, inputs)

    model_hash = cfg.model_hash()
    last_path = out / LAST
    start_epoch, state, rng, best_loss, net = 0, None, None, math.inf, None
    if args.resume:
        if not last_path.exists():
            raise DataError(f"--resume given but {last_path} does not exist")
        net, state, saved_hash, extra = load_checkpoint(last_path)
        if saved_hash != model_hash and not args.force:
            raise ConfigError(f"{last_path} was written under a different config (hash {saved_hash[:12]}); use --force to override")
        start_epoch = extra["epoch"] + 1
        rng = np.random.default_rng()
        rng.bit_generator.state = extra["rng_state"]
        best_loss = extra.get("best_loss", math.inf)
    if net is None:
        net = _build_net(cfg, n * sd)
    if state is None:
        state = AdamState(lr=tcfg.lr, weight_decay=tcfg.weight_decay, max_epochs=tcfg.epochs)
    if rng is None:
        rng = np.random.default_rng(tcfg.seed)

    every = int(cfg.doc["train"].get("checkpoint_every", 100))
    history = []
    loss_csv = out / LOSS_CSV
    _start_loss_csv(loss_csv, start_epoch)

    def on_epoch(epoch, value):
        history.append((epoch, value))
        with open(loss_csv, "a", newline="") as fh:
            csv.writer(fh).writerow([epoch, repr(float(value))])
        if every > 0 and ((epoch + 1) % every == 0 or epoch + 1 == tcfg.epochs):
            extra = {"epoch": epoch, "rng_state": rng.bit_generator.state, "best_loss": min(best_loss, min(v for _, v in history))}
            save_checkpoint(last_path, net, state, model_hash, extra)

    res = train_run(tcfg, train_ds.flat_positions(), train_ds.flat_forces(), net, _kT(cfg), state, rng, start_epoch, on_epoch)
    best_new = min((v for _, v in history), default=math.inf)
    model_path = out / MODEL
    meta = {"loss_variant": loss.variant, "t_p": loss.t_p}
    if cfg.doc["train"].get("keep", "best") == "final":
        last_epoch = history[-1][0] if history else start_epoch - 1
        save_checkpoint(model_path, res.net, None, model_hash, {**meta, "epoch": last_epoch, "loss": history[-1][1] if history else None})
    elif best_new < best_loss or not model_path.exists():
        save_checkpoint(model_path, res.best_net, None, model_hash, {**meta, "epoch": res.best_epoch, "loss": best_new})
    write_sidecar(model_path, {"kind": "model", "train_split": inputs, "loss": cfg.doc["loss"], "model_hash": model_hash})
    manifest.finish(
        {"model": str(model_path), "loss_csv": str(loss_csv), "last": str(last_path)},
        loss_variant=loss.variant,
        t_p=loss.t_p if loss.variant == "Piecewise" else None,
        best_epoch=res.best_epoch,
        kept=cfg.doc["train"].get("keep", "best"),
    )
    print(f"trained {len(history)} epochs ({loss.variant}); best epoch {res.best_epoch}; model at {model_path}")
    return 0


def cmd_sample(cfg, args):
    out = _out_dir(cfg)
    model_path = Path(args.checkpoint) if args.checkpoint else out / MODEL
    if not model_path.exists():
        raise DataError(f"checkpoint {model_path} not found; run 'psmlab train' first")
    net, _, saved_hash, _ = load_checkpoint(model_path)
    if saved_hash != cfg.model_hash():
        if not args.force:
            raise ConfigError(
                f"{model_path} was trained under a different config (hash {saved_hash[:12]}, "
                f"current {cfg.model_hash()[:12]}); use --force to sample anyway"
            )
        log.warning("sampling despite config hash mismatch (--force)")
    ref_side = read_sidecar(out / TRAIN_SPLIT) or {}
    system = cfg.system()
    if system is not None:
        n, sd = system.n_particles, system.spatial_dim
    else:
        _, ref = _load_reference(cfg, out)
        n, sd = ref.n_particles, ref.spatial_dim
    if n * sd != net.input_dim:
        raise DataError(f"checkpoint expects {net.input_dim} coordinates, the system has {n * sd}")
    scfg = cfg.sampler_config()
    scfg.zero_com = scfg.zero_com or _zero_com(n)
    manifest = Manifest(out, "sample", cfg, {"model": str(model_path), "model_sha256": sha256_file(model_path)})
    samples = sample(net_score_fn(net, cfg.schedule()), cfg.schedule(), scfg, n, sd)
    path = out / SAMPLES
    write_samples_csv(path, samples)
    write_sidecar(
        path,
        {
            "kind": "samples",
            "model": str(model_path),
            "model_sha256": sha256_file(model_path),
            "sampler": scfg.to_dict(),
            "forced": saved_hash != cfg.model_hash(),
            "split_source": ref_side.get("source"),
        },
    )
    manifest.finish({"samples": str(path)}, method=scfg.method)
    print(f"wrote {len(samples)} samples to {path} ({scfg.method}, {scfg.n_steps} steps)")
    return 0


def _subsample(points, m, seed):
    if len(points) <= m:
        return points
    idx = np.sort(np.random.default_rng(seed).choice(len(points), size=m, replace=False))
    return points[idx]


def _axis_edges(cfg, ref_values):
    lo, hi = cfg.doc["metrics"]["range"] or (float(ref_values.min()), float(ref_values.max()))
    return np.linspace(lo, hi, int(cfg.doc["metrics"]["bins"]) + 1)


def evaluate(samples, reference, cfg, system=None, out=None):
    """All applicable metrics of ``samples`` against ``reference`` (both SampleSets)."""
    if samples.dim != reference.dim or samples.n_particles != reference.n_particles:
        raise DataError(
            f"samples have {samples.n_particles} particles x {samples.spatial_dim} dims, "
            f"reference has {reference.n_particles} x {reference.spatial_dim}"
        )
    m = cfg.doc["metrics"]
    result = {}
    hists = {}
    if samples.n_particles == 1:
        for axis in range(samples.dim):
            edges = _axis_edges(cfg, reference.configurations[:, axis])
            p = coordinate_hist(samples, edges, axis)
            q = coordinate_hist(reference, edges, axis)
            name = f"coord_{'xyz'[axis]}"
            result[name] = {"tvd": tvd(p, q), "mae": mae_hist(p, q)}
            hists[name] = (p, q)
    else:
        edges = default_distance_edges(reference, int(m["hr_bins"]))
        p = interatomic_hist(samples, edges)
        q = interatomic_hist(reference, edges)
        result["h_r"] = {"tvd": tvd(p, q), "mae": mae_hist(p, q)}
        hists["h_r"] = (p, q)
        bonds = bonds_from_frame(reference.configurations[0], float(m["bond_cutoff"]), reference.spatial_dim)
        if bonds:
            result["stable_fraction"] = stable_fraction(samples, bonds, float(m["stability_threshold"]))
    if system is not None:
        ref_e = reference.energies
        if ref_e is None:
            ref_e = np.array([system.energy(x) for x in reference.configurations])
        edges = np.linspace(float(ref_e.min()), float(ref_e.max()), int(m["energy_bins"]) + 1)
        p, skipped = energy_hist(samples, system, edges)
        q = histogram_from_values(ref_e, edges)
        result["energy"] = {"tvd": tvd(p, q), "mae": mae_hist(p, q), "skipped": skipped}
        sample_e, _ = sample_energies(samples, system)
        if len(sample_e):
            k = min(len(sample_e), len(ref_e))
            result["energy"]["w2"] = wasserstein2_1d(_subsample(sample_e, k, cfg.seed), _subsample(ref_e, k, cfg.seed))
        hists["energy"] = (p, q)
    k = min(len(samples), len(reference), int(m["w2_max_points"]) if samples.dim > 1 else len(samples))
    a = _subsample(samples.configurations, k, cfg.seed)
    b = _subsample(reference.configurations, k, cfg.seed)
    result["w2"] = wasserstein2(a, b, exact_limit=int(m["w2_max_points"]))
    if out is not None:
        for name, (p, q) in hists.items():
            p.to_csv(Path(out) / f"hist_{name}_samples.csv")
            q.to_csv(Path(out) / f"hist_{name}_reference.csv")
    return result


def cmd_eval(cfg, args):
    out = _out_dir(cfg)
    samples_path = Path(args.samples) if args.samples else out / SAMPLES
    if not samples_path.exists():
        raise DataError(f"samples {samples_path} not found; run 'psmlab sample' first")
    ref_path = Path(args.reference) if args.reference else _reference_path(cfg, out)
    if not ref_path.exists():
        raise DataError(f"reference {ref_path} not found")
    manifest = Manifest(out, "eval", cfg, {"samples": str(samples_path), "reference": str(ref_path)})
    samples = read_samples_csv(samples_path)
    ref_ds = read_npz(ref_path)
    reference = SampleSet(ref_ds.flat_positions(), ref_ds.n_particles, ref_ds.spatial_dim, energies=ref_ds.energies)
    metrics = evaluate(samples, reference, cfg, cfg.system(), out)
    doc = {
        "samples": str(samples_path),
        "samples_sha256": sha256_array(samples.configurations),
        "reference": str(ref_path),
        "reference_sha256": sha256_array(reference.configurations),
        "n_samples": len(samples),
        "n_reference": len(reference),
        "metrics": metrics,
        "code_version": __version__,
    }
    path = out / METRICS
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    manifest.finish({"metrics": str(path)})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _checks(quick=False):
    """The oracle suite as ``(name, fn)`` pairs; each ``fn`` returns ``(passed, detail)``."""
    from .oracle import Gaussian1D, psm_label_mc_check, target_variance, target_variance_mc, theorem2_check
    from .schedule import NoiseSchedule

    ve = NoiseSchedule.ve(0.1, 5.0)

    def label_mc():
        worst = 0.0
        for t in (0.1, 0.5, 0.9):
            for x_t in (-2.0, -1.0, 0.0, 1.0, 2.0):
                r = psm_label_mc_check(Gaussian1D(), ve, t, x_t, 100_000, np.random.default_rng(7))
                worst = max(worst, r.abs_error)
        return worst <= 1e-2, f"max |MC - analytic| = {worst:.2e}"

    def variances():
        g = Gaussian1D()
        worst = 0.0
        flips = []
        for alpha, sigma in ((1.0, 0.5), (1.0, 2.0)):
            exact = target_variance(g, alpha, sigma)
            emp = target_variance_mc(g, alpha, sigma, 200_000 if quick else 1_000_000, rng=np.random.default_rng(3))
            worst = max(worst, *(abs(e / x - 1) for e, x in zip(emp, exact)))
            flips.append(emp[0] > emp[1])
        ok = worst <= 0.05 and flips == [True, False]
        return ok, f"max relative error {worst:.3f}; DSM > PSM below/above sigma = alpha*std: {flips}"

    def theorem2():
        p, q = Gaussian1D(0.0, 1.0), Gaussian1D(0.5, 1.0)
        grid = [(x, t) for x in (-1.0, -0.5, 0.0, 0.5, 1.0) for t in (0.002, 0.005, 0.01, 0.02)]
        bad = [(x, t) for x, t in (grid[::5] if quick else grid) if not theorem2_check(p, q, t, ve, x).holds]
        return not bad, f"inequality fails at {bad}" if bad else "I1 <= I2 on the whole grid"

    def forces():
        rng = np.random.default_rng(11)
        systems = [LennardJonesCluster(13), LennardJonesCluster(55), QuarticToy(d=1), QuarticToy(d=2), GaussianWell(dim=3, std=0.7)]
        n = 3 if quick else 10
        worst = {type(s).__name__ + str(s.dim): max(check_force_consistency(s, random_configuration(s, rng)) for _ in range(n)) for s in systems}
        return max(worst.values()) <= 1e-4, ", ".join(f"{k}: {v:.1e}" for k, v in worst.items())

    def gradients():
        rng = np.random.default_rng(5)
        net = ScoreNet(3, [32, 32], 16, seed=5)
        x = rng.normal(size=(8, 3))
        err = gradient_check(net, x, rng.uniform(size=8), rng.normal(size=(8, 3)), n_coords=20, rng=rng)
        return err <= 1e-4, f"max relative error {err:.2e}"

    return [
        ("psm_label_monte_carlo", label_mc),
        ("target_variances", variances),
        ("score_gap_inequality", theorem2),
        ("force_consistency", forces),
        ("network_gradients", gradients),
    ]


def cmd_check(cfg, args):
    from .oracle import timed, write_report

    out = _out_dir(cfg)
    manifest = Manifest(out, "check", cfg)
    results = []
    for name, fn in _checks(quick=args.quick):
        r = timed(name, fn)
        results.append(r)
        print(f"{'PASS' if r['passed'] else 'FAIL'} {name} ({r['seconds']:.2f} s): {r['detail']}")
    path = out / CHECK_REPORT
    doc = write_report(path, results, {"code_version": __version__, "quick": args.quick})
    manifest.finish({"report": str(path)}, all_passed=doc["all_passed"])
    return 0 if doc["all_passed"] else 1


COMMANDS = {"reference": cmd_reference, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "check": cmd_check}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (merged over the preset)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named default config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--strict", action="store_true", help="turn sampler warnings into a nonzero exit")
    common.add_argument("--force", action="store_true", help="proceed despite a config hash mismatch")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="psmlab", description="Potential score matching toolkit.")
    parser.add_argument("--version", action="version", version=f"psmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reference", parents=[common], help="generate a MALA reference trajectory")
    p = sub.add_parser("train", parents=[common], help="train a noise-prediction network")
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt in the output directory")
    p = sub.add_parser("sample", parents=[common], help="draw samples from a trained network")
    p.add_argument("--checkpoint", help="model checkpoint (default: <out>/model.ckpt)")
    p = sub.add_parser("eval", parents=[common], help="compare samples with the reference")
    p.add_argument("--samples", help="sample CSV (default: <out>/samples.csv)")
    p.add_argument("--reference", help="reference NPZ (default: the config's reference)")
    p = sub.add_parser("check", parents=[common], help="run the oracle self-checks")
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes and grids")
    return parser


def _limit_threads():
    value = os.environ.get("PSMLAB_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"PSMLAB_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("PSMLAB_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _limit_threads()
        if args.command == "check" and args.config is None and args.preset is None:
            cfg = RunConfig.build("gauss", None, args.seed, args.out or "runs/check")
        else:
            cfg = RunConfig.load(args.config, args.preset, args.seed, args.out)
        start = time.perf_counter()
        code = COMMANDS[args.command](cfg, args)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - start)
        if limiter is not None:
            limiter.restore_original_limits()
        return code
    except PSMLabError as exc:
        print(f"psmlab {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
