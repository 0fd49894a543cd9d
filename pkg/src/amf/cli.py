"""``amf`` command-line front end.

Every command writes its outputs atomically and prints a one-line JSON
summary on stdout. Exit status: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import io as amfio
from . import repro
from .evaluation import dice, one_vs_rest, q_area, quasi_multilabel
from .field import TvMode
from .likelihood import (ClampRange, GaussianClassModel, MixtureModel, kde_fit,
                         psi_from_probability, psi_gaussian, psi_kde, psi_mixture)
from .meanfield import (AlternatingConfig, AmfParams, alternating_fit, level_set_labels,
                        map_labels, otsu_init, probabilities, solve_logits)
from .posterior import (GibbsConfig, compare_correlation, gelman_rubin, gibbs_report,
                        gibbs_sample, q_area_moments, sample_area_moments)
from .rof import RofParams, rof_solve
from .synth import MaternConfig, matern_instance, synth_ambiguous_circle

log = logging.getLogger("amf")
SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def worker_count():
    """Parallelism cap from ``AMF_THREADS`` (0 or 1 = sequential)."""
    raw = os.environ.get("AMF_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AMF_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("AMF_THREADS must be nonnegative")
    return max(n, 1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_report(path, report):
    amfio.write_json(path, _jsonable(report))


def _rof_params(args, default_mode):
    mode = args.mode or default_mode
    return RofParams(tol=args.tol, max_iter=args.max_iter, mode=mode)


def _add_mode(p, default):
    p.add_argument("--mode", choices=["iso", "aniso"], default=None,
                   help=f"TV discretisation (default {default})")


def _add_rof(p):
    p.add_argument("--tol", type=float, default=1e-4, help="relative duality-gap tolerance")
    p.add_argument("--max-iter", type=int, default=10000)


def _check_positive(name, value):
    if not value > 0:
        raise UsageError(f"--{name} must be positive")


# --- commands --------------------------------------------------------------

def cmd_denoise(args):
    _check_positive("alpha", args.alpha)
    u0 = amfio.read_amff(args.input)
    params = _rof_params(args, "iso")
    result = rof_solve(u0, args.alpha, params)
    amfio.write_amff(args.output, result.u)
    return {"output": args.output, "iterations": result.iterations,
            "energy": result.final_energy, "converged": result.converged,
            "mode": params.mode.value}


def _load_mixture_pair(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
        return MixtureModel.from_json(obj["foreground"]), MixtureModel.from_json(obj["background"])
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: expected {{\"foreground\": ..., \"background\": ...}} "
                         f"mixture JSON ({exc})") from None


def _load_image(path):
    if path.endswith(".amff"):
        return amfio.read_amff(path)
    return amfio.read_pgm(path)


def _psi_from_model(y, model):
    if model.startswith("gauss:"):
        try:
            return psi_gaussian(y, GaussianClassModel.parse(model))
        except ValueError as exc:
            raise UsageError(f"--model: {exc}") from None
    if model.startswith("mix:"):
        fg, bg = _load_mixture_pair(model[len("mix:"):])
        return psi_mixture(y, fg, bg)
    if model == "otsu":
        return psi_gaussian(y, otsu_init(y))
    raise UsageError(f"--model: unknown model {model!r} (use gauss:..., mix:FILE or otsu)")


def cmd_likelihood(args):
    if (args.image is None) == (args.prob is None):
        raise UsageError("likelihood: give exactly one of --image or --prob")
    if args.prob is not None:
        clamp = ClampRange(args.clamp, 1.0 - args.clamp)
        psi = psi_from_probability(amfio.read_amff(args.prob), clamp)
    else:
        if args.model is None:
            raise UsageError("likelihood: --image requires --model")
        psi = _psi_from_model(_load_image(args.image), args.model)
    amfio.write_amff(args.output, psi)
    return {"output": args.output, "psi_min": float(psi.min()), "psi_max": float(psi.max())}


def cmd_segment(args):
    if args.lam < 0:
        raise UsageError("--lambda must be nonnegative")
    params = AmfParams(args.lam, _rof_params(args, "iso"))
    summary = {"lambda": args.lam, "mode": params.mode.value}
    if args.psi is not None:
        if args.image is not None:
            raise UsageError("segment: give either --psi or --image, not both")
        psi = amfio.read_amff(args.psi)
    elif args.image is not None:
        if args.model is None:
            raise UsageError("segment: --image requires --model")
        y = _load_image(args.image)
        if args.alternate:
            init = otsu_init(y) if args.model == "otsu" else None
            if init is None:
                if not args.model.startswith("gauss:"):
                    raise UsageError("--alternate needs a gauss:... or otsu model")
                init = GaussianClassModel.parse(args.model)
            if args.estimator == "kde":
                z0 = (psi_gaussian(y, init) > 0).astype(np.uint8)
                init = (kde_fit(y[z0 == 1]), kde_fit(y[z0 == 0]))
            cfg = AlternatingConfig(max_outer=args.alternate, estimator=args.estimator)
            fit = alternating_fit(y, init, params, cfg)
            if isinstance(fit.model, GaussianClassModel):
                psi = psi_gaussian(y, fit.model)
                summary["model"] = fit.model.__dict__
            else:
                psi = psi_kde(y, *fit.model)
            summary.update(outer_iterations=fit.outer_iterations,
                           alternating_converged=fit.converged, degenerate=fit.degenerate)
        else:
            psi = _psi_from_model(y, args.model)
    else:
        raise UsageError("segment: give --psi or --image")

    result = solve_logits(psi, params)
    theta = probabilities(result.u)
    z = level_set_labels(result.u, args.nu) if args.nu is not None else map_labels(theta)
    if args.output_theta:
        amfio.write_amff(args.output_theta, theta)
    if args.output_map:
        amfio.write_labels(args.output_map, z)
    summary.update(output_theta=args.output_theta, output_map=args.output_map,
                   foreground=int(z.sum()), iterations=result.iterations,
                   converged=result.converged)
    return summary


def _gibbs_config(args):
    if args.sweeps < args.thin:
        raise UsageError("--sweeps must be at least --thin")
    return GibbsConfig(chains=args.chains, samples_per_chain=args.sweeps // args.thin,
                       temperature=args.temperature, thin=args.thin, burn_in=args.burn_in,
                       seed=args.seed, mode=args.mode or "aniso")


def cmd_gibbs(args):
    if args.lam < 0:
        raise UsageError("--lambda must be nonnegative")
    psi = amfio.read_amff(args.psi)
    try:
        cfg = _gibbs_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples = gibbs_sample(psi, args.lam, cfg, workers=worker_count())
    report = {"schema": SCHEMA, "lambda": args.lam, "chains": cfg.chains,
              "thin": cfg.thin, "burn_in": cfg.burn_in_sweeps, "seed": cfg.seed,
              "temperature": cfg.temperature, **gibbs_report(samples)}
    if args.out:
        amfio.write_amfs(args.out, samples.labels)
    if args.report:
        _write_report(args.report, report)
    return {k: report[k] for k in ("rhat", "converged", "retained", "mean_area", "var_area",
                                   "mode")} | {"out": args.out, "report": args.report}


def cmd_compare(args):
    psi = amfio.read_amff(args.psi)
    labels = amfio.read_amfs(args.samples)
    if labels.shape[1:] != psi.shape:
        raise ValueError(f"{args.samples}: sample size {labels.shape[1:]} does not match psi "
                         f"{psi.shape}")
    mode = TvMode.parse(args.mode or "aniso")
    if args.theta:
        theta = amfio.read_amff(args.theta)
    else:
        theta = probabilities(solve_logits(psi, AmfParams(args.lam, _rof_params(args, "aniso"))).u)
    q_mean, q_var = q_area_moments(theta)
    g_mean, g_var = sample_area_moments(labels)
    report = {"schema": SCHEMA, "lambda": args.lam, "mode": mode.value,
              "particles": int(len(labels)),
              "correlation": compare_correlation(labels, psi, args.lam, theta, mode),
              "q_mean_area": q_mean, "q_var_area": q_var,
              "gibbs_mean_area": g_mean, "gibbs_var_area": g_var}
    if args.chains and len(labels) % args.chains == 0 and len(labels) // args.chains >= 10:
        areas = labels.reshape(args.chains, -1, psi.size).sum(axis=2).astype(float)
        report["rhat"] = gelman_rubin(areas)
    if args.report:
        _write_report(args.report, report)
    return report


def cmd_synth(args):
    if args.kind == "matern":
        if args.quantile == "auto":
            quantile = None
        else:
            try:
                quantile = float(args.quantile)
            except ValueError:
                raise UsageError("--quantile must be a number or 'auto'") from None
        try:
            cfg = MaternConfig(size=args.size, order_p=args.p, length_l=args.l,
                               noise_sigma=args.sigma, seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        truth, noisy, q = matern_instance(cfg, quantile)
        amfio.write_labels(args.out_truth, truth)
        amfio.write_amff(args.out_noisy, noisy)
        return {"out_truth": args.out_truth, "out_noisy": args.out_noisy, "quantile": q,
                "foreground": int(truth.sum())}
    os.makedirs(args.out_dir, exist_ok=True)
    clean, noisy, truth, fg, bg = synth_ambiguous_circle(args.size, args.seed)
    amfio.write_amff(os.path.join(args.out_dir, "clean.amff"), clean)
    amfio.write_amff(os.path.join(args.out_dir, "noisy.amff"), noisy)
    amfio.write_labels(os.path.join(args.out_dir, "truth.pgm"), truth)
    amfio.write_json(os.path.join(args.out_dir, "models.json"),
                     {"foreground": fg.to_json(), "background": bg.to_json()})
    return {"out_dir": args.out_dir, "size": args.size, "seed": args.seed}


def cmd_eval(args):
    if args.metric == "dice":
        return {"dice": dice(amfio.read_labels(args.a), amfio.read_labels(args.b))}
    qa = q_area(amfio.read_labels(args.map), amfio.read_amff(args.theta))
    return {"q_area": qa.value, "empty_foreground": qa.empty_foreground,
            "empty_background": qa.empty_background}


def cmd_multilabel(args):
    if len(args.probs) < 2:
        raise UsageError("multilabel: need at least two --probs maps")
    if args.lam < 0:
        raise UsageError("--lambda must be nonnegative")
    maps = [amfio.read_amff(p) for p in args.probs]
    params = AmfParams(args.lam, _rof_params(args, "iso"))
    thetas = one_vs_rest(maps, params, workers=worker_count())
    probs, labels = quasi_multilabel(thetas)
    classes = []
    for c in range(len(maps)):
        qa = q_area((labels == c).astype(np.uint8), probs[c])
        classes.append({"class": c, "q_area": qa.value, "q_area_flagged": qa.flagged,
                        "pixels": int((labels == c).sum())})
    report = {"schema": SCHEMA, "lambda": args.lam, "mode": params.mode.value,
              "classes": classes}
    if args.truth:
        grey, _ = amfio.read_grey(args.truth)
        if grey.shape != labels.shape:
            raise ValueError(f"{args.truth}: size does not match the probability maps")
        scores = [dice((labels == c).astype(np.uint8), (grey == c).astype(np.uint8))
                  for c in range(len(maps))]
        for entry, s in zip(classes, scores):
            entry["dice"] = s
        report["mean_dice"] = float(np.mean(scores))
    if len(maps) > 255:
        raise ValueError("at most 255 classes fit in a PGM label image")
    amfio.write_pgm(args.out_labels, labels.astype(np.uint8), maxval=255)
    if args.out_report:
        _write_report(args.out_report, report)
    return {"out_labels": args.out_labels, "out_report": args.out_report,
            "classes": len(maps), "mean_dice": report.get("mean_dice")}


def cmd_repro(args):
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if args.name == "circle":
        report, arrays = repro.circle(lam=args.lam, size=args.size, seed=args.seed,
                                      mode=args.mode or "iso")
        amfio.write_amff(os.path.join(out_dir, "theta.amff"), arrays["theta"])
        amfio.write_labels(os.path.join(out_dir, "map.pgm"), arrays["map"])
        _write_report(os.path.join(out_dir, "report.json"), report)
        return {k: report[k] for k in ("mean_theta_upper", "mean_theta_lower",
                                       "mean_theta_background", "converged")} | {"out_dir": out_dir}
    report = repro.matern_compare(lengths=args.lengths, instances=args.instances,
                                  size=args.size, sigma=args.sigma, lam=args.lam,
                                  chains=args.chains, samples_per_chain=args.samples_per_chain,
                                  thin=args.thin, seed=args.seed, mode=args.mode or "aniso",
                                  workers=worker_count())
    _write_report(os.path.join(out_dir, "report.json"), report)
    return {"out_dir": out_dir, **report["summary"]}


# --- parser ------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="amf", description="Active mean-field segmentation tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("denoise", help="ROF/TV denoising of an AMFF field")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--output", default="out.amff")
    _add_mode(p, "iso")
    _add_rof(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("likelihood", help="build the logit likelihood field psi")
    p.add_argument("--image", help="PGM or AMFF image")
    p.add_argument("--model", help="gauss:mu0,sigma0,mu1,sigma1 | mix:FILE.json | otsu")
    p.add_argument("--prob", help="AMFF foreground-probability map")
    p.add_argument("--clamp", type=float, default=1e-5)
    p.add_argument("--output", default="psi.amff")
    p.set_defaults(func=cmd_likelihood)

    p = sub.add_parser("segment", help="AMF segmentation")
    p.add_argument("--psi")
    p.add_argument("--image")
    p.add_argument("--model", help="gauss:mu0,sigma0,mu1,sigma1 | mix:FILE.json | otsu")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--nu", type=float, help="threshold phi at nu instead of 0")
    p.add_argument("--alternate", type=int, metavar="MAXOUTER",
                   help="re-estimate class models up to MAXOUTER times")
    p.add_argument("--estimator", choices=["gauss", "kde"], default="gauss")
    p.add_argument("--output-theta", default="theta.amff")
    p.add_argument("--output-map")
    _add_mode(p, "iso")
    _add_rof(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("gibbs", help="Gibbs-sample the exact posterior")
    p.add_argument("--psi", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--chains", type=int, default=5)
    p.add_argument("--sweeps", type=int, default=10000, help="sweeps per chain after burn-in")
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--burn-in", type=int, help="burn-in sweeps (default: a fifth of the total)")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="AMFS sample file")
    p.add_argument("--report", help="JSON report")
    _add_mode(p, "aniso")
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("compare", help="compare Gibbs samples with the AMF approximation")
    p.add_argument("--psi", required=True)
    p.add_argument("--samples", required=True, help="AMFS sample file")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--theta", help="AMF probabilities (solved from psi when omitted)")
    p.add_argument("--chains", type=int, help="chain count, enables the R-hat of the file")
    p.add_argument("--report")
    _add_mode(p, "aniso")
    _add_rof(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="synthetic data")
    ssub = p.add_subparsers(dest="kind", parser_class=_Parser, required=True)
    m = ssub.add_parser("matern", help="thresholded Matern random field plus noise")
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--l", type=float, default=3.0)
    m.add_argument("--p", type=int, default=1)
    m.add_argument("--sigma", type=float, default=0.3)
    m.add_argument("--quantile", default="auto")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out-truth", default="truth.pgm")
    m.add_argument("--out-noisy", default="noisy.amff")
    c = ssub.add_parser("circle", help="ambiguous circle scene")
    c.add_argument("--size", type=int, default=128)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluation metrics")
    esub = p.add_subparsers(dest="metric", parser_class=_Parser, required=True)
    d = esub.add_parser("dice", help="Dice overlap of two label images")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    q = esub.add_parser("qarea", help="area-normalised Q mass of a MAP labeling")
    q.add_argument("--theta", required=True)
    q.add_argument("--map", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("multilabel", help="one-vs-rest AMF with simplex projection")
    p.add_argument("--probs", nargs="+", required=True, help="per-class AMFF probability maps")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--truth", help="PGM of class indices for Dice scores")
    p.add_argument("--out-labels", default="labels.pgm")
    p.add_argument("--out-report")
    _add_mode(p, "iso")
    _add_rof(p)
    p.set_defaults(func=cmd_multilabel)

    p = sub.add_parser("repro", help="desk-scale experiment recipes")
    rsub = p.add_subparsers(dest="name", parser_class=_Parser, required=True)
    c = rsub.add_parser("circle", help="ambiguous-circle experiment")
    c.add_argument("--lambda", dest="lam", type=float, default=5.0)
    c.add_argument("--size", type=int, default=repro.CIRCLE_REPRO_SIZE)
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--out-dir", default=".")
    _add_mode(c, "iso")
    mc = rsub.add_parser("matern-compare", help="Matern P-versus-Q comparison")
    mc.add_argument("--lambda", dest="lam", type=float, default=1.0)
    mc.add_argument("--lengths", type=float, nargs="+", default=[1.0, 3.0])
    mc.add_argument("--instances", type=int, default=10)
    mc.add_argument("--size", type=int, default=64)
    mc.add_argument("--sigma", type=float, default=0.3)
    mc.add_argument("--chains", type=int, default=5)
    mc.add_argument("--samples-per-chain", type=int, default=200)
    mc.add_argument("--thin", type=int, default=10)
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--out-dir", default=".")
    _add_mode(mc, "aniso")
    p.set_defaults(func=cmd_repro)
    return parser


def run(argv=None):
    """Execute one command; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            summary = args.func(args)
    except UsageError as exc:
        print(f"amf {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"amf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    summary = {"schema": SCHEMA, "command": args.command, **summary}
    if caught:
        summary["warnings"] = [str(w.message) for w in caught]
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


def main():
    sys.exit(run())
