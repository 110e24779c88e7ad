"""Files, run configuration and the ``flame`` command line."""

import argparse
import csv
import io
import json
import logging
import math
import sys
import zipfile
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .diagnostics import DEFAULT_RHAT_THRESHOLD, diagnose
from .exceptions import ConfigurationError, DataError, SamplerError, StaleDrawsError
from .inference import FlamePosterior, Scenario, contrast_scenarios, fit_posterior, raf_curve
from .model import Dataset, ModelSpec, SubjectRecord
from .sampler import PosteriorDraws, SamplerConfig
from .sim import Shape, SimConfig, benchmark_grid, generate_dataset, run_benchmark

logger = logging.getLogger("flame")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNHEALTHY = 3

SUBJECTS_FILE = "subjects.csv"
EPISODES_FILE = "episodes.csv"
DRAWS_FILE = "draws.npz"
RAF_FILE = "raf.csv"
DIAGNOSTICS_FILE = "diagnostics.json"
CONTRAST_FILE = "contrast.json"
BENCHMARK_FILE = "benchmark.csv"
CONFIG_FILE = "config.json"
EPISODE_COLUMNS = ["subject_id", "start_minute", "duration_minutes"]

# zip entries carry this timestamp so the archive bytes depend only on content
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


# ---------------------------------------------------------------- CSV files

def _fmt(v):
    return "" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def _parse_float(text, path, row, column):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}, row {row}: column {column!r} is not numeric: {text!r}",
                        row=row) from None
    return v


def load_dataset(subjects_path, episodes_path):
    """Join a subjects CSV and a long-format episodes CSV.

    Subject order follows the subjects file.  Row numbers in error messages
    count the header as row 1.
    """
    with open(subjects_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["subject_id", "y"]:
            raise DataError(f"{subjects_path}: header must start with subject_id,y", row=1)
        covariates = header[2:]
        rows = {}
        order = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header) or any(cell.strip() == "" for cell in row):
                raise DataError(f"{subjects_path}, row {row_no}: missing cell", row=row_no)
            sid = row[0]
            if sid in rows:
                raise DataError(f"{subjects_path}, row {row_no}: duplicate subject_id {sid!r}",
                                row=row_no)
            if row[1] not in ("0", "1"):
                raise DataError(f"{subjects_path}, row {row_no}: y must be 0 or 1, got {row[1]!r}",
                                row=row_no)
            x = [_parse_float(c, subjects_path, row_no, covariates[j])
                 for j, c in enumerate(row[2:])]
            rows[sid] = (int(row[1]), np.array(x, dtype=float))
            order.append(sid)
    if not order:
        raise DataError(f"{subjects_path}: no subjects")

    durations = {sid: [] for sid in order}
    starts = {sid: [] for sid in order}
    with open(episodes_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header != EPISODE_COLUMNS:
            raise DataError(f"{episodes_path}: header must be {','.join(EPISODE_COLUMNS)}", row=1)
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{episodes_path}, row {row_no}: expected 3 cells", row=row_no)
            sid, start, dur = row
            if sid not in durations:
                raise DataError(f"{episodes_path}, row {row_no}: unknown subject_id {sid!r}",
                                row=row_no)
            z = _parse_float(dur, episodes_path, row_no, "duration_minutes")
            if not z > 0 or not math.isfinite(z):
                raise DataError(f"{episodes_path}, row {row_no}: duration_minutes must be "
                                f"positive, got {dur!r}", row=row_no)
            s = math.nan if start.strip() == "" else _parse_float(
                start, episodes_path, row_no, "start_minute")
            durations[sid].append(z)
            starts[sid].append(s)
    subjects = [SubjectRecord(sid, rows[sid][0], rows[sid][1], durations[sid], starts[sid])
                for sid in order]
    return Dataset(subjects, covariates)


def write_dataset(ds, subjects_path, episodes_path):
    with open(subjects_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "y"] + list(ds.covariate_names))
        for s in ds.subjects:
            w.writerow([s.id, s.y] + [_fmt(v) for v in s.x])
    with open(episodes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for s in ds.subjects:
            for start, z in zip(s.starts, s.durations):
                w.writerow([s.id, _fmt(start), _fmt(z)])


def write_raf_csv(est, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["duration", "mean", "lower", "upper"])
        for row in zip(est.grid, est.mean, est.lower, est.upper):
            w.writerow([_fmt(v) for v in row])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------- run config

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "domain": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2},
                "beta_prior_sd": _POSITIVE,
                "gamma1_prior_sd": _POSITIVE,
                "gamma2_prior_sd": _POSITIVE,
                "tau_cauchy_scale": _POSITIVE,
                "anchor_nonnegative": {"type": "boolean"},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chains": {"type": "integer", "minimum": 1},
                "warmup": {"type": "integer", "minimum": 0},
                "samples": {"type": "integer", "minimum": 1},
                "target_accept": {"type": "number", "exclusiveMinimum": 0,
                                  "exclusiveMaximum": 1},
                "max_tree_depth": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "adapt": {"type": "boolean"},
                "metric": {"enum": ["diag", "dense"]},
                "n_jobs": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"out_dir": {"type": "string"}},
        },
    },
}


class RunConfig:
    """Model spec, sampler settings and output directory from one JSON document."""

    def __init__(self, model=None, sampler=None, out_dir="."):
        self.model = model or ModelSpec()
        self.sampler = sampler or SamplerConfig()
        self.out_dir = str(out_dir)

    @classmethod
    def from_dict(cls, doc):
        try:
            jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigurationError(f"run config invalid at {where}: {err.message}") from None
        model = doc.get("model", {})
        if "domain" in model:
            model = dict(model, domain=tuple(model["domain"]))
        return cls(ModelSpec(**model), SamplerConfig(**doc.get("sampler", {})),
                   doc.get("output", {}).get("out_dir", "."))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"{path}: not valid JSON ({err})") from None

    def to_dict(self):
        return {"model": self.model.to_dict(), "sampler": self.sampler.to_dict(),
                "output": {"out_dir": self.out_dir}}


# ---------------------------------------------------------------- draws file

_DRAW_FIELDS = ("samples", "log_density", "divergent", "tree_depth", "n_leapfrog",
                "accept_stat", "energy", "step_size", "inv_metric")


def _zip_entry(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_draws(post, path):
    """Write draws as one ``.npy`` column per field plus a JSON header.

    The archive is byte-reproducible: fixed entry order and timestamps.
    """
    raw = post.raw
    meta = {
        "config_hash": post.spec.config_hash(),
        "seed": post.seed,
        "model": post.spec.to_dict(),
        "sampler": raw.config.to_dict(),
        "covariate_names": list(post.covariate_names),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=2))
        for name in _DRAW_FIELDS:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(getattr(raw, name)),
                                      allow_pickle=False)
            _zip_entry(zf, f"{name}.npy", buf.getvalue())


def load_draws(path, expected_spec=None):
    """Read a draws file; refuse it if ``expected_spec`` hashes differently."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        arrays = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")),
                                                 allow_pickle=False)
                  for name in _DRAW_FIELDS}
    model = dict(meta["model"], domain=tuple(meta["model"]["domain"]))
    spec = ModelSpec(**model)
    if spec.config_hash() != meta["config_hash"]:
        raise StaleDrawsError(f"{path}: stored model does not match its recorded hash")
    if expected_spec is not None and expected_spec.config_hash() != meta["config_hash"]:
        raise StaleDrawsError(
            f"{path} was fitted under model config {meta['config_hash'][:12]}, current config "
            f"is {expected_spec.config_hash()[:12]}; refit before summarizing")
    draws = PosteriorDraws(config=SamplerConfig(**meta["sampler"]), **arrays)
    return FlamePosterior.from_draws(draws, len(meta["covariate_names"]), spec,
                                     meta["covariate_names"], seed=meta["seed"])


# ---------------------------------------------------------------- scenarios

def load_scenarios(path):
    """A JSON list of scenarios, or ``{"scenarios": [...], "contrasts": [[a, b], ...]}``."""
    with open(path) as fh:
        doc = json.load(fh)
    pairs = None
    if isinstance(doc, dict):
        pairs = [tuple(p) for p in doc.get("contrasts", [])]
        doc = doc.get("scenarios", [])
    if not isinstance(doc, list) or not doc:
        raise ConfigurationError(f"{path}: expected a non-empty list of scenarios")
    scenarios = []
    for item in doc:
        try:
            scenarios.append(Scenario(item["label"], item.get("episode_durations", []),
                                      item["covariate_profile"]))
        except (KeyError, TypeError) as err:
            raise ConfigurationError(f"{path}: bad scenario entry {item!r} ({err})") from None
    if pairs is None:
        pairs = [(scenarios[-2].label, scenarios[-1].label)] if len(scenarios) > 1 else []
    return scenarios, pairs


# ---------------------------------------------------------------- commands

def _run_config(args):
    """Config file overlaid with command-line flags.

    Also reports whether the model was given explicitly (file or flags) and
    whether the duration domain was.
    """
    doc = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"{args.config}: not valid JSON ({err})") from None
    cfg = RunConfig.from_dict(doc)
    model = {}
    if getattr(args, "K", None) is not None:
        model["K"] = args.K
    if getattr(args, "domain_max", None) is not None:
        model["domain"] = (cfg.model.domain[0], args.domain_max)
    cfg.model = replace(cfg.model, **model)
    sampler = {k: getattr(args, k) for k in ("seed", "chains", "warmup", "samples", "n_jobs")
               if getattr(args, k, None) is not None}
    cfg.sampler = replace(cfg.sampler, **sampler)
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    explicit = bool(model) or "model" in doc
    domain_given = "domain" in model or "domain" in doc.get("model", {})
    return cfg, explicit, domain_given


def _out(cfg, name):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def cmd_simulate(args):
    cfg = SimConfig(I=args.I, shape=args.shape, event_rate=args.event_rate, seed=args.seed,
                    replicates=args.replicate + 1)
    ds = generate_dataset(cfg, args.replicate)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / SUBJECTS_FILE, out / EPISODES_FILE)
    # simulated durations live on (0, max_duration]; pin the basis there
    write_json({"model": {"domain": [0.0, cfg.max_duration]}}, out / CONFIG_FILE)
    logger.info("wrote %d subjects to %s", len(ds), out)
    return EXIT_OK


def _report_health(diag, threshold):
    if not diag.healthy(threshold):
        logger.warning("sampler diagnostics unhealthy: max rhat %.3f, %d divergences",
                       float(np.max(diag.rhat)), diag.divergences)
        return EXIT_UNHEALTHY
    return EXIT_OK


def cmd_fit(args):
    cfg, _, domain_given = _run_config(args)
    ds = load_dataset(args.subjects, args.episodes)
    if not domain_given:
        if ds.max_duration <= 0:
            raise ConfigurationError("no episodes to infer the duration domain; pass --domain-max")
        cfg.model = replace(cfg.model, domain=(0.0, ds.max_duration))
    post = fit_posterior(ds, cfg.model, cfg.sampler)
    save_draws(post, _out(cfg, DRAWS_FILE))
    if post.raw.n_chains < 2:
        return EXIT_OK
    return _report_health(diagnose(post), args.rhat_threshold)


def cmd_summarize(args):
    cfg, explicit, _ = _run_config(args)
    post = load_draws(args.draws, cfg.model if explicit else None)
    write_raf_csv(raf_curve(post, grid_step=args.grid_step), _out(cfg, RAF_FILE))
    diag = diagnose(post)
    write_json(diag.to_dict(args.rhat_threshold), _out(cfg, DIAGNOSTICS_FILE))
    return _report_health(diag, args.rhat_threshold)


def cmd_contrast(args):
    cfg, explicit, _ = _run_config(args)
    post = load_draws(args.draws, cfg.model if explicit else None)
    scenarios, pairs = load_scenarios(args.scenarios)
    if args.pair:
        pairs = [tuple(p) for p in args.pair]
    result = contrast_scenarios(post, post.knots, scenarios, pairs)
    write_json(result.to_dict(), _out(cfg, CONTRAST_FILE))
    return EXIT_OK


def _load_grid(text):
    if text is None:
        return {}
    path = Path(text)
    doc = json.loads(path.read_text()) if path.exists() else json.loads(text)
    allowed = {"shapes", "event_rates", "sizes", "Ks"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown benchmark grid keys: {sorted(unknown)}")
    return doc


def cmd_benchmark(args):
    cfg, _, _ = _run_config(args)
    grid = _load_grid(args.grid)
    cells = benchmark_grid(replicates=args.replicates, seed=cfg.sampler.seed, **grid)
    rows = run_benchmark(cells, cfg.sampler, _spec_kwargs(cfg.model),
                         out_csv=_out(cfg, BENCHMARK_FILE))
    return EXIT_OK if all(r["failures"] == 0 for r in rows) else EXIT_UNHEALTHY


def _spec_kwargs(spec):
    d = spec.to_dict()
    for key in ("K", "domain"):
        d.pop(key)
    return d


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="flame", description=(
        "Bayesian logistic regression with a smooth per-episode risk accumulation function."))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True, sampler=True):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--out-dir")
        p.add_argument("--seed", type=int)
        if model:
            p.add_argument("--K", type=int)
            p.add_argument("--domain-max", type=float)
        if sampler:
            p.add_argument("--chains", type=int)
            p.add_argument("--warmup", type=int)
            p.add_argument("--samples", type=int)
            p.add_argument("--n-jobs", type=int)
        p.add_argument("--rhat-threshold", type=float, default=DEFAULT_RHAT_THRESHOLD)

    p = sub.add_parser("simulate", help="write a synthetic subjects/episodes pair")
    p.add_argument("--shape", choices=[s.value for s in Shape], default="linear")
    p.add_argument("--event-rate", type=int, choices=(10, 30, 50), default=30)
    p.add_argument("--I", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior and save draws")
    p.add_argument("--subjects", required=True)
    p.add_argument("--episodes", required=True)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="accumulation curve CSV and diagnostics JSON")
    p.add_argument("--draws", required=True)
    p.add_argument("--grid-step", type=float, default=0.1)
    common(p, sampler=False)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("contrast", help="scenario probabilities and differences")
    p.add_argument("--draws", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"),
                   help="report p(B) - p(A); repeatable")
    common(p, sampler=False)
    p.set_defaults(func=cmd_contrast)

    p = sub.add_parser("benchmark", help="simulation grid of mean ISE")
    p.add_argument("--grid", help="JSON (file or inline) with shapes, event_rates, sizes, Ks")
    p.add_argument("--replicates", type=int, default=20)
    common(p, model=False)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DataError, StaleDrawsError, ValueError, OSError) as err:
        print(f"flame {args.command}: error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SamplerError as err:
        print(f"flame {args.command}: sampler failed: {err}", file=sys.stderr)
        return EXIT_UNHEALTHY


if __name__ == "__main__":
    sys.exit(main())
