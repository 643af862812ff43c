"""Experiment steps behind the command-line interface.

Layout under ``cfg.out``::

    data/<city>.csv, data/<city>.meta        train rows first, then test rows
    models/link_<city>.fcw
    models/{vae_enc,vae_dec,gan_gen,gan_disc}_<tag>.fcw   tag = city or "fl"
    models/scaler_<tag>.json
    federation/<mode>/history.csv  (+ round_<t>/ payloads with exchange on)
    eval/report.csv, eval/cdf_<city>.csv
    summary.csv, trend.txt
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import federated as fed
from . import gan, metrics, nn, synth, vae
from .config import ExperimentConfig, derive_seed
from .linkmodel import LinkModel, accuracy, train_link_model

log = logging.getLogger(__name__)

MODES = ("vae", "gan", "fl-vae", "fl-gan")
MODE_METHOD = {"vae": "VAE", "gan": "GAN", "fl-vae": "FL-VAE", "fl-gan": "FL-GAN"}
FILES = {"vae": ("vae_enc", "vae_dec"), "gan": ("gan_gen", "gan_disc")}


class PipelineError(RuntimeError):
    pass


def _dirs(cfg):
    out = Path(cfg.out)
    return out / "data", out / "models", out / "eval"


def dataset_path(cfg, city) -> Path:
    return _dirs(cfg)[0] / f"{city}.csv"


def load_split(cfg, city) -> tuple[synth.CityDataset, synth.CityDataset]:
    path = dataset_path(cfg, city)
    if not path.exists():
        raise PipelineError(f"missing dataset {path}; run gen-data first")
    ds = synth.read_dataset(path)
    return ds.train(), ds.test()


# -- gen-data ----------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig) -> list[Path]:
    data_dir = _dirs(cfg)[0]
    data_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for city in cfg.cities:
        profile = cfg.profiles[city]
        seed = derive_seed(cfg.seed, "data", city)
        ds = synth.generate_city(profile, cfg.links[city], seed=seed)
        train, test = synth.split_train_test(ds, cfg.test_fraction,
                                             np.random.default_rng(derive_seed(cfg.seed, "split", city)))
        path = synth.write_dataset(synth.combine_split(train, test), dataset_path(cfg, city),
                                   {"generation_seed": seed, "test_fraction": cfg.test_fraction})
        log.info("%s: %d links (%d train / %d test)", city, len(ds), len(train), len(test))
        written.append(path)
    return written


# -- train-link --------------------------------------------------------------

def cmd_train_link(cfg: ExperimentConfig) -> dict[str, float]:
    models_dir = _dirs(cfg)[1]
    models_dir.mkdir(parents=True, exist_ok=True)
    accs = {}
    for city in cfg.cities:
        train, test = load_split(cfg, city)
        model = train_link_model(train, cfg.link)
        model.save(models_dir / f"link_{city}.fcw")
        accs[city] = accuracy(model, test)
        log.info("link model %s: test accuracy %.4f", city, accs[city])
    return accs


# -- train -------------------------------------------------------------------

def _save_scaler(path, scaler):
    path.write_text(json.dumps(scaler.to_dict()))


def _load_scaler(path) -> synth.FeatureScaler:
    return synth.FeatureScaler.from_dict(json.loads(Path(path).read_text()))


def save_model(cfg, kind: str, tag: str, params, scaler) -> None:
    models_dir = _dirs(cfg)[1]
    models_dir.mkdir(parents=True, exist_ok=True)
    parts = list(params.parts().items())
    for fname, (part, w) in zip(FILES[kind], parts):
        nn.save_weights(models_dir / f"{fname}_{tag}.fcw", f"{kind}:{part}", {part: w}, {"tag": tag})
    _save_scaler(models_dir / f"scaler_{tag}.json", scaler)


def load_model(cfg, kind: str, tag: str):
    models_dir = _dirs(cfg)[1]
    paths = [models_dir / f"{fname}_{tag}.fcw" for fname in FILES[kind]]
    if not all(p.exists() for p in paths):
        return None
    parts = {}
    for p in paths:
        parts.update(nn.load_weights(p)[1])
    params = fed.KINDS[kind].params_type.from_parts(parts)
    return params, _load_scaler(models_dir / f"scaler_{tag}.json")


def _link_model(cfg, city):
    path = _dirs(cfg)[1] / f"link_{city}.fcw"
    return LinkModel.load(path) if path.exists() else None


def cmd_train(cfg: ExperimentConfig, mode: str, city: str | None = None):
    if mode not in MODES:
        raise PipelineError(f"unknown mode {mode!r}; expected one of {MODES}")
    kind = mode.removeprefix("fl-")
    fcfg = fed.FedConfig(rounds=cfg.fed.rounds, local_epochs=cfg.fed.local_epochs, batch_size=cfg.fed.batch_size,
                         learning_rate=cfg.fed.learning_rate, model_kind=kind, seed=derive_seed(cfg.fed.seed, mode),
                         workers=cfg.fed.workers)
    if mode.startswith("fl-"):
        if city is not None:
            raise PipelineError("federated modes train on every configured city; drop --city")
        splits = {c: load_split(cfg, c)[0] for c in cfg.cities}
        scaler = synth.merge_scalers([synth.fit_scaler(s) for s in splits.values()])
        clients = [fed.ClientHandle(c, vae.path_data(splits[c], scaler), derive_seed(cfg.seed, mode, c),
                                    _link_model(cfg, c)) for c in cfg.cities]
        fdir = Path(cfg.out) / "federation" / mode
        fdir.mkdir(parents=True, exist_ok=True)

        def report(r):
            log.info("%s round %d: %s (%.1fs)", mode, r.round,
                     ", ".join(f"{c.client_id}={c.mean_loss:.4f}" for c in r.clients), r.wall_time)

        params, history = fed.run_federation(fcfg, clients, exchange_dir=fdir if cfg.exchange else None,
                                             on_round=report)
        history.write_csv(fdir / "history.csv")
        save_model(cfg, kind, "fl", params, scaler)
        return params, history
    if city is None:
        raise PipelineError(f"standalone mode {mode} needs --city")
    if city not in cfg.cities:
        raise PipelineError(f"unknown city {city!r}")
    train, _ = load_split(cfg, city)
    scaler = synth.fit_scaler(train)
    params = fed.init_global(fcfg)
    params, checksums, logs = fed.train_standalone(kind, params, vae.path_data(train, scaler),
                                                   cfg.standalone_epochs, fcfg, derive_seed(cfg.seed, mode, city))
    hdir = Path(cfg.out) / "standalone"
    hdir.mkdir(parents=True, exist_ok=True)
    with (hdir / f"history_{mode}_{city}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "client", "mean_local_loss", "checksum"])
        for b, (c, lg) in enumerate(zip(checksums, logs)):
            w.writerow([b, city, repr(lg.mean_loss), c])
    save_model(cfg, kind, city, params, scaler)
    return params, checksums


# -- eval --------------------------------------------------------------------

def _sampler(kind, params, scaler):
    return vae.vae_sampler(params, scaler) if kind == "vae" else gan.gan_sampler(params, scaler)


def cmd_eval(cfg: ExperimentConfig) -> metrics.MetricsReport:
    eval_dir = _dirs(cfg)[2]
    eval_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.MetricsReport()
    for city in cfg.cities:
        _, test = load_split(cfg, city)
        link_model = _link_model(cfg, city)
        dists = {"test": test.linked().strongest_path_loss()}
        for mode in MODES:
            kind = mode.removeprefix("fl-")
            tag = "fl" if mode.startswith("fl-") else city
            loaded = load_model(cfg, kind, tag)
            if loaded is None:
                continue
            params, scaler = loaded
            rng = np.random.default_rng(derive_seed(cfg.seed, "eval", city, mode))
            row = metrics.evaluate_model(_sampler(kind, params, scaler), link_model, test, scaler, rng,
                                         city=city, method=MODE_METHOD[mode])
            report.add(row)
            dists[MODE_METHOD[mode]] = row.generated
            log.info("%s %s: KL %.4f  W1 %.3f dB", city, MODE_METHOD[mode], row.kl, row.wasserstein)
        metrics.emit_cdf_csv(dists, eval_dir / f"cdf_{city}.csv")
    if not report.rows:
        raise PipelineError("no trained path models found; run train first")
    metrics.emit_report(report, eval_dir / "report.csv")
    return report


# -- report ------------------------------------------------------------------

def _rounds_trained(cfg, mode):
    path = Path(cfg.out) / "federation" / mode / "history.csv"
    if not path.exists():
        return ""
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    return str(len({r["round"] for r in rows}))


def cmd_report(cfg: ExperimentConfig) -> Path:
    path = _dirs(cfg)[2] / "report.csv"
    if not path.exists():
        raise PipelineError(f"no results in {cfg.out}; run eval first")
    report = metrics.read_report(path)
    order = {m: i for i, m in enumerate(metrics.METHODS)}
    rows = sorted(report.rows, key=lambda r: (cfg.cities.index(r.city) if r.city in cfg.cities else 99,
                                              order.get(r.method, 99)))
    out = Path(cfg.out) / "summary.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city", "paper_city", "method", "kl", "wasserstein", "paper_kl", "paper_wasserstein",
                    "fed_rounds"])
        for r in rows:
            pc = synth.PAPER_CITY.get(r.city, "")
            ref = metrics.PAPER_TABLE.get((pc, r.method), ("", ""))
            mode = {v: k for k, v in MODE_METHOD.items()}[r.method]
            w.writerow([r.city, pc, r.method, f"{r.kl:.6f}", f"{r.wasserstein:.6f}", ref[0], ref[1],
                        _rounds_trained(cfg, mode) if mode.startswith("fl-") else ""])
    lines = trend_lines(report, cfg.cities)
    (Path(cfg.out) / "trend.txt").write_text("\n".join(lines) + "\n")
    return out


def trend_lines(report: metrics.MetricsReport, cities) -> list[str]:
    """Per city and model family: is the federated distance at or below the standalone one?"""
    lines = ["# federated <= standalone (non-gating trend; published values are not reproduced here)"]
    for city in cities:
        for fam in ("VAE", "GAN"):
            a, b = report.get(city, fam), report.get(city, f"FL-{fam}")
            if a is None or b is None:
                continue
            lines.append(f"{city} {fam}: W1 {b.wasserstein:.3f} vs {a.wasserstein:.3f} "
                         f"[{'yes' if b.wasserstein <= a.wasserstein else 'no'}]  "
                         f"KL {b.kl:.4f} vs {a.kl:.4f} [{'yes' if b.kl <= a.kl else 'no'}]")
    return lines
