"""Batch experiment commands: prepare, train, generate, evaluate.

All outputs live under ``RunConfig.out_dir``::

    data/manifest.json  data/train.json  data/test.json
    checkpoints/vae.mlgc  checkpoints/vae_loss.csv
    checkpoints/predictor_<variant>.mlgc  checkpoints/predictor_<variant>_loss.csv
    generations/<variant>/<song>.json  generations/<variant>/<song>.tokens.csv
    reports/summary.csv  reports/rhythm_<variant>.csv  reports/vmo_summary.csv
    reports/vmo/<song>__<source>_ir.csv  reports/vmo/<song>__<source>_patterns.csv

Every written file gets a ``<file>.meta.json`` sidecar holding the command,
the full configuration and content hashes of its inputs.
"""

import csv
import dataclasses
import enum
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernel as K
from .ec2vae import EC2VAE, VaeConfig, loss_csv, train_vae
from .metrics import MetricError, Normalization, RhythmAccuracyConfig, rhythm_accuracy
from .predictor import (ContinuationTask, LatentPredictor, PredictorConfig, Variant, continue_song,
                        make_examples, train_predictor)
from .symbolic import (SongEvents, MelodyGrid, augment_keys, grid_to_notes, normalize_tempo, parse_corpus,
                       quantize, dumps_corpus, song_segments)
from .synth import SynthParams, synth_corpus
from .vmo import build_oracle, find_patterns, ir_curve_csv, melody_frames, pattern_csv, threshold_sweep


class PipelineError(RuntimeError):
    """A command cannot run; the message says what to do about it."""


@dataclass(frozen=True)
class VmoParams:
    grid_size: int = 20
    min_len: int = 4


@dataclass(frozen=True)
class RunConfig:
    corpus: str = "synth:50"
    out_dir: str = "run"
    seed: int = 0
    split: float = 0.9
    augment: bool = True
    vae: VaeConfig = field(default_factory=lambda: VaeConfig.toy(epochs=50, lr=1.5e-2, beta=0.03, batch_size=64))
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    task: ContinuationTask = field(default_factory=ContinuationTask)
    rhythm: RhythmAccuracyConfig = field(default_factory=RhythmAccuracyConfig)
    vmo: VmoParams = field(default_factory=VmoParams)
    synth: SynthParams = field(default_factory=SynthParams)

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must be in (0, 1)")
        if self.task.n != self.vae.n:
            raise ValueError("task.n must equal vae.n")

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)


_SECTIONS = ("vae", "predictor", "task", "rhythm", "vmo", "synth")


def _plain(v):
    return v.value if isinstance(v, enum.Enum) else v


def config_items(cfg):
    """Flat ``key -> value`` view, keys as used in config files and CLI flags."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(v):
                out[f"{f.name}.{g.name}"] = _plain(getattr(v, g.name))
        else:
            out[f.name] = v
    return out


def config_keys():
    return list(config_items(RunConfig()))


def _coerce(raw, like):
    if isinstance(like, bool):
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return str(raw)


def with_settings(cfg, settings):
    """Apply ``key -> string`` settings; unknown keys are errors."""
    flat = config_items(cfg)
    unknown = sorted(set(settings) - set(flat))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    top, nested = {}, {s: {} for s in _SECTIONS}
    for key, raw in settings.items():
        value = _coerce(raw, flat[key])
        if "." in key:
            sec, name = key.split(".", 1)
            nested[sec][name] = value
        else:
            top[key] = value
    for sec, kw in nested.items():
        if kw:
            if sec == "rhythm" and "normalization" in kw:
                kw["normalization"] = Normalization(kw["normalization"])
            top[sec] = dataclasses.replace(getattr(cfg, sec), **kw)
    return dataclasses.replace(cfg, **top)


def parse_config_text(text):
    settings = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        settings[k.strip()] = v.strip()
    return settings


def load_config(path=None, overrides=None):
    settings = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            settings.update(parse_config_text(fh.read()))
    settings.update(overrides or {})
    return with_settings(RunConfig(), settings)


def dumps_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in config_items(cfg).items())


def sub_seed(root, name):
    """Seed of the named sub-stream of ``root``."""
    return int(K.Rng(root, name).integers(0, 2 ** 31 - 1))


def vae_config(cfg):
    return dataclasses.replace(cfg.vae, seed=sub_seed(cfg.seed, "vae"))


def predictor_config(cfg):
    return dataclasses.replace(cfg.predictor, seed=sub_seed(cfg.seed, "predictor"))


# ------------------------------------------------------------------- files


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path, data, cfg, command, inputs=(), **extra):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(data)
    meta = dict(command=command, config=config_items(cfg),
                inputs={os.path.relpath(p, cfg.out_dir): _sha256(p) for p in inputs}, **extra)
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require(path, hint):
    if not os.path.exists(path):
        raise PipelineError(f"missing {path}; {hint}")
    return path


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return f"{x:.6f}" if isinstance(x, float) else x


def _load_songs(path):
    return parse_corpus(path)


def _log(cfg, msg, log):
    if log is not None:
        log(msg)


# ---------------------------------------------------------------- commands


def load_source_corpus(cfg):
    if cfg.corpus.startswith("synth:"):
        count = int(cfg.corpus.split(":", 1)[1])
        return synth_corpus(cfg.seed, count, cfg.synth)
    if not os.path.exists(cfg.corpus):
        raise PipelineError(f"corpus {cfg.corpus} not found")
    return parse_corpus(cfg.corpus)


def split_songs(songs, split, seed):
    """Seeded shuffle by song; at least one song lands on each side when possible."""
    order = K.Rng(seed, "prepare").permutation(len(songs))
    n_train = int(round(split * len(songs)))
    if len(songs) >= 2:
        n_train = min(max(n_train, 1), len(songs) - 1)
    train = [songs[i] for i in sorted(order[:n_train])]
    test = [songs[i] for i in sorted(order[n_train:])]
    return train, test


def cmd_prepare(cfg, log=print):
    songs = [normalize_tempo(s) for s in load_source_corpus(cfg)]
    for i, s in enumerate(songs):
        if not s.song_id:
            songs[i] = dataclasses.replace(s, song_id=f"song{i:04d}")
    ids = [s.song_id for s in songs]
    if len(set(ids)) != len(ids):
        raise PipelineError("song ids in the corpus are not unique")
    train, test = split_songs(songs, cfg.split, cfg.seed)
    train_aug = augment_keys(train) if cfg.augment else train
    train_path = _write(cfg.path("data", "train.json"), dumps_corpus(train_aug), cfg, "prepare")
    test_path = _write(cfg.path("data", "test.json"), dumps_corpus(test), cfg, "prepare")
    manifest = dict(seed=cfg.seed, split=cfg.split, train=[s.song_id for s in train],
                    test=[s.song_id for s in test], train_augmented=[s.song_id for s in train_aug])
    path = _write(cfg.path("data", "manifest.json"), json.dumps(manifest, indent=2) + "\n", cfg, "prepare",
                  inputs=[train_path, test_path])
    _log(cfg, f"prepare: {len(train)} train songs ({len(train_aug)} after augmentation), "
              f"{len(test)} test songs -> {path}", log)
    return manifest


def _data(cfg, name):
    return _require(cfg.path("data", f"{name}.json"), "run `prepare` first")


def vae_path(cfg):
    return cfg.path("checkpoints", "vae.mlgc")


def predictor_path(cfg, variant):
    return cfg.path("checkpoints", f"predictor_{Variant.parse(variant).value}.mlgc")


def cmd_train_vae(cfg, log=print):
    train_path = _data(cfg, "train")
    songs = _load_songs(train_path)
    segments = [seg for s in songs for seg in song_segments(s, cfg.vae.n)]
    if not segments:
        raise PipelineError("training split holds no complete segment")
    vcfg = vae_config(cfg)
    model, rows = train_vae(segments, vcfg, log=log)
    ck = _write(vae_path(cfg), K.dump_checkpoint(model.params), cfg, "train-vae", inputs=[train_path],
                model_seed=vcfg.seed)
    _write(cfg.path("checkpoints", "vae_loss.csv"), loss_csv(rows), cfg, "train-vae", inputs=[train_path])
    last = rows[-1]
    _log(cfg, f"train-vae: ce_melody={last[1]:.4f} ce_rhythm={last[2]:.4f} kl={last[3]:.3f} -> {ck}", log)
    return model, rows


def load_vae(cfg):
    path = _require(vae_path(cfg), "run `train-vae` first")
    model = EC2VAE(vae_config(cfg))
    try:
        model.params.load_state_dict(K.load_checkpoint(path))
    except (KeyError, K.DimensionError) as e:
        raise PipelineError(f"{path} does not match the configured VAE: {e}") from e
    return model


def training_examples(cfg, vae, songs):
    return [ex for s in songs for ex in make_examples(s, vae, cfg.task)]


def cmd_train_predictor(cfg, variant, log=print):
    variant = Variant.parse(variant)
    train_path = _data(cfg, "train")
    vae = load_vae(cfg)
    examples = training_examples(cfg, vae, _load_songs(train_path))
    if not examples:
        raise PipelineError(f"no training song has {cfg.task.T} segments")
    pcfg = predictor_config(cfg)
    model, rows = train_predictor(examples, variant, pcfg, cfg.vae.zp_dim, cfg.vae.zr_dim, cfg.task, log=log)
    inputs = [train_path, vae_path(cfg)]
    ck = _write(predictor_path(cfg, variant), K.dump_checkpoint(model.params), cfg, "train-predictor",
                inputs=inputs, variant=variant.value, model_seed=pcfg.seed)
    _write(cfg.path("checkpoints", f"predictor_{variant.value}_loss.csv"),
           _csv(["epoch", "mse"], [(e, f"{m:.8g}") for e, m in rows]), cfg, "train-predictor",
           inputs=inputs, variant=variant.value)
    _log(cfg, f"train-predictor[{variant.value}]: mse={rows[-1][1]:.6f} ({len(examples)} examples) -> {ck}", log)
    return model, rows


def load_predictor(cfg, variant):
    variant = Variant.parse(variant)
    path = _require(predictor_path(cfg, variant), f"run `train-predictor --variant {variant.value}` first")
    model = LatentPredictor(variant, predictor_config(cfg), cfg.vae.zp_dim, cfg.vae.zr_dim, cfg.task)
    try:
        model.params.load_state_dict(K.load_checkpoint(path))
    except (KeyError, K.DimensionError) as e:
        raise PipelineError(f"{path} does not match the configured predictor: {e}") from e
    return model


def generation_path(cfg, variant, song_id, suffix=".json"):
    return cfg.path("generations", Variant.parse(variant).value, f"{song_id}{suffix}")


def eligible_test_songs(cfg):
    songs = _load_songs(_data(cfg, "test"))
    return [s for s in songs if len(song_segments(s, cfg.task.n)) >= cfg.task.T]


def _generated_song(reference, grid, cfg):
    end = len(grid.tokens) * grid.timestep_sec
    chords = tuple(c for c in reference.chords if c.onset_sec < end)
    chords = tuple(c if c.onset_sec + c.duration_sec <= end else
                   dataclasses.replace(c, duration_sec=end - c.onset_sec) for c in chords)
    return SongEvents(reference.bpm, reference.key, tuple(grid_to_notes(grid)), chords,
                      song_id=reference.song_id)


def cmd_generate(cfg, variant, song_id=None, log=print):
    """Continue one test song (or every eligible one when ``song_id`` is None)."""
    variant = Variant.parse(variant)
    test_path = _data(cfg, "test")
    songs = _load_songs(test_path)
    if song_id is not None:
        songs = [s for s in songs if s.song_id == song_id]
        if not songs:
            raise PipelineError(f"song {song_id!r} is not in the test split")
    vae = load_vae(cfg)
    model = load_predictor(cfg, variant)
    inputs = [test_path, vae_path(cfg), predictor_path(cfg, variant)]
    written = []
    for song in songs:
        if len(song_segments(song, cfg.task.n)) < cfg.task.T:
            if song_id is not None:
                raise PipelineError(f"song {song_id!r} is shorter than {cfg.task.T} segments")
            continue
        grid, _ = continue_song(song, vae, model, cfg.task)
        gen = _generated_song(song, grid, cfg)
        meta = dict(variant=variant.value, song_id=song.song_id, seed=cfg.seed)
        p = _write(generation_path(cfg, variant, song.song_id), dumps_corpus([gen]), cfg, "generate",
                   inputs=inputs, **meta)
        _write(generation_path(cfg, variant, song.song_id, ".tokens.csv"),
               _csv(["cell", "token"], enumerate(int(t) for t in grid.tokens)), cfg, "generate",
               inputs=inputs, **meta)
        written.append(p)
    _log(cfg, f"generate[{variant.value}]: {len(written)} continuation(s)", log)
    return written


def _grid_of(song, cells):
    grid, _ = quantize(song)
    tokens = np.asarray(grid.tokens)[:cells]
    if len(tokens) < cells:
        raise PipelineError(f"song {song.song_id!r} shorter than {cells} cells")
    return MelodyGrid(tokens, grid.timestep_sec)


def continuation_notes(grid, start_cell):
    """Notes of ``grid`` from ``start_cell`` on, onsets relative to that cell."""
    return grid_to_notes(MelodyGrid(np.asarray(grid.tokens)[start_cell:], grid.timestep_sec))


def score_continuation(reference_grid, generated_grid, task, rcfg):
    """Rhythm accuracy over the generated region only; ``nan`` when undefined.

    Returns ``(accuracy, reference note count, generated note count)``.
    """
    start = task.t * task.n
    ref = continuation_notes(reference_grid, start)
    gen = continuation_notes(generated_grid, start)
    try:
        acc = rhythm_accuracy(ref, gen, rcfg)
    except MetricError:
        acc = float("nan")
    return acc, len(ref), len(gen)


def _vmo_report(cfg, song_id, source, tokens, inputs):
    frames = melody_frames(tokens)
    theta, rows = threshold_sweep(frames, cfg.vmo.grid_size)
    patterns = find_patterns(build_oracle(frames, theta), cfg.vmo.min_len)
    base = cfg.path("reports", "vmo", f"{song_id}__{source}")
    _write(base + "_ir.csv", ir_curve_csv(rows), cfg, "evaluate", inputs=inputs, source=source)
    _write(base + "_patterns.csv", pattern_csv(patterns), cfg, "evaluate", inputs=inputs, source=source)
    return theta, max(ir for _, ir in rows), len(patterns)


def cmd_evaluate(cfg, log=print):
    songs = eligible_test_songs(cfg)
    if not songs:
        raise PipelineError(f"no test song has {cfg.task.T} segments")
    cells = cfg.task.T * cfg.task.n
    summary, vmo_rows = [], []
    refs = {s.song_id: _grid_of(s, cells) for s in songs}
    test_path = _data(cfg, "test")
    for s in songs:
        theta, ir, n_pat = _vmo_report(cfg, s.song_id, "reference", refs[s.song_id].tokens, [test_path])
        vmo_rows.append((s.song_id, "reference", _fmt(theta), _fmt(ir), n_pat))
    for variant in Variant:
        per_song = []
        for s in songs:
            gpath = generation_path(cfg, variant, s.song_id, ".tokens.csv")
            _require(gpath, f"run `generate --variant {variant.value}` first")
            with open(gpath, encoding="utf-8") as fh:
                tokens = np.array([int(r["token"]) for r in csv.DictReader(fh)], dtype=np.int64)
            gen = MelodyGrid(tokens)
            acc, n_ref, n_gen = score_continuation(refs[s.song_id], gen, cfg.task, cfg.rhythm)
            per_song.append((s.song_id, variant.value, acc, n_ref, n_gen))
            theta, ir, n_pat = _vmo_report(cfg, s.song_id, variant.value, tokens, [gpath])
            vmo_rows.append((s.song_id, variant.value, _fmt(theta), _fmt(ir), n_pat))
        gen_inputs = [generation_path(cfg, variant, s.song_id, ".tokens.csv") for s in songs]
        _write(cfg.path("reports", f"rhythm_{variant.value}.csv"),
               _csv(["song_id", "variant", "rhythm_accuracy", "n_ref_notes", "n_gen_notes"],
                    [(i, v, _fmt(a), nr, ng) for i, v, a, nr, ng in per_song]), cfg, "evaluate",
               inputs=[test_path] + gen_inputs, variant=variant.value)
        accs = np.array([row[2] for row in per_song], dtype=np.float64)
        mean = float(np.nanmean(accs)) if np.isfinite(accs).any() else float("nan")
        summary.append((variant.value, len(per_song), mean))
    all_inputs = [test_path] + [generation_path(cfg, v, s.song_id, ".tokens.csv") for v in Variant for s in songs]
    _write(cfg.path("reports", "vmo_summary.csv"),
           _csv(["song_id", "source", "theta_star", "ir_peak", "patterns"], vmo_rows), cfg, "evaluate",
           inputs=all_inputs)
    _write(cfg.path("reports", "summary.csv"),
           _csv(["variant", "songs", "mean_rhythm_accuracy"], [(v, n, _fmt(m)) for v, n, m in summary]),
           cfg, "evaluate", inputs=all_inputs)
    for v, n, m in summary:
        _log(cfg, f"evaluate[{v}]: mean rhythm accuracy {m:.4f} over {n} songs", log)
    return {v: m for v, _, m in summary}


def cmd_synth_corpus(path, songs=50, seed=0):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_corpus(synth_corpus(seed, songs)))
    return path


def run_all(cfg, log=print):
    """Every stage in order; returns the mean rhythm accuracy per variant."""
    cmd_prepare(cfg, log)
    cmd_train_vae(cfg, log)
    for v in Variant:
        cmd_train_predictor(cfg, v, log)
        cmd_generate(cfg, v, log=log)
    return cmd_evaluate(cfg, log)
