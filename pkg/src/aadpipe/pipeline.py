"""Two-stage experiment orchestration.

Stage 1: per cross-validation fold, train the image CNN on alpha-power
topographies, then attribute min(explain_size, |test|) test images against a
background of training images; the absolute attributions, averaged over all
samples and folds, give a global importance map that is collapsed to a
64-channel ranking. Stage 2: for each channel budget k, train the temporal
ConvNet on the raw windows of the top-k channels, reusing the stage-1 split
seeds fold for fold.

Everything is seeded through ``np.random.SeedSequence((seed, tag, ...))`` so
reruns with the same configuration are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp, models, nn
from .attribution import ChannelRanking, DeepShapExplainer, global_importance, rank_channels
from .data import SubjectManifest, biosemi64_layout, load_subject_trials
from .topomap import render, save_pgm

# seed-stream tags
_SPLIT, _INIT_CNN, _SHUFFLE_CNN, _BACKGROUND, _EXPLAIN, _INIT_TCN, _SHUFFLE_TCN = range(7)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


def _int_seed(*key) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    data_dir: str = "data"
    run_dir: str = "run"
    subjects: tuple[str, ...] = ("S01",)
    window_seconds: float = 10.0
    overlap: float = 0.5
    budgets: tuple[int, ...] = (64, 48, 32, 16, 8)
    folds: int = 10
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lr: float = 3e-4
    weight_decay: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    background_size: int = 200
    explain_size: int = 100
    seed: int = 0
    split_by_trial: bool = False

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if any(not 1 <= b <= 64 for b in self.budgets):
            raise ValueError("channel budgets must lie in 1..64")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")

    def hash(self) -> str:
        doc = {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


_CONFIG_TYPES = {
    "subjects": lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
    "budgets": lambda s: tuple(int(x) for x in s.split(",") if x.strip()),
    "fractions": lambda s: tuple(float(x) for x in s.split(",")),
    "split_by_trial": lambda s: s.strip().lower() in ("1", "true", "yes"),
    "window_seconds": float, "overlap": float, "lr": float, "weight_decay": float,
    "folds": int, "batch_size": int, "max_epochs": int, "patience": int,
    "background_size": int, "explain_size": int, "seed": int,
    "data_dir": str, "run_dir": str,
}


def load_config_file(path) -> dict:
    """Parse a plain ``key = value`` config file (# starts a comment)."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _CONFIG_TYPES[key](value)
    return out


@dataclass
class SubjectWindows:
    """Preprocessed decision windows for one subject."""

    subject_id: str
    windows: np.ndarray      # (n, 64, T) z-scored EEG
    labels: np.ndarray       # (n,) in {0, 1}
    trial_ids: np.ndarray    # (n,)
    starts: np.ndarray       # (n,) start sample within the trial
    channel_names: list[str]
    sample_rate: float


@dataclass
class FoldResult:
    fold: int
    stage: str               # "cnn" | "tcn"
    budget: int
    test_accuracy: float
    epochs: int
    best_val_accuracy: float
    flag: str = ""           # "at_chance" when validation never beat 0.5


@dataclass
class Stage1Result:
    fold_results: list[FoldResult]
    states: list[dict]
    global_map: np.ndarray
    ranking: ChannelRanking
    maps_per_fold: list[int]


def stratified_split(labels, fractions, seed, groups=None):
    """Seeded per-class shuffle with proportional allocation.

    Returns (train, val, test) index arrays. With ``groups`` given (e.g.
    trial ids), whole groups are allocated instead of single windows.
    """
    labels = np.asarray(labels)
    if isinstance(seed, tuple):
        rng = _rng(*seed)
    else:
        rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("both classes must be present for a stratified split")

    if groups is not None:
        groups = np.asarray(groups)
        uniq = np.unique(groups)
        glabel = np.array([labels[groups == g][0] for g in uniq])
        gtr, gva, gte = _split_indices(glabel, fractions, rng)
        expand = lambda gidx: np.flatnonzero(np.isin(groups, uniq[gidx]))
        return expand(gtr), expand(gva), expand(gte)

    return _split_indices(labels, fractions, rng)


def _split_indices(labels, fractions, rng):
    f_train, f_val, f_test = fractions
    tr, va, te = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_te = int(round(f_test * idx.size))
        n_va = int(round(f_val * idx.size))
        te.append(idx[:n_te])
        va.append(idx[n_te:n_te + n_va])
        tr.append(idx[n_te + n_va:])
    return (np.sort(np.concatenate(tr)), np.sort(np.concatenate(va)),
            np.sort(np.concatenate(te)))


def preprocess_subject(manifest: SubjectManifest, data_dir, window_seconds: float = 10.0,
                       overlap: float = 0.5) -> SubjectWindows:
    """Run the dsp chain on every trial and collect decision windows."""
    eeg_idx = manifest.indices("eeg")
    mastoid_idx = manifest.indices("mastoid")
    eog_idx = manifest.indices("eog")
    if len(mastoid_idx) != 2:
        raise ValueError("manifest must tag exactly two mastoid channels")
    wins, labels, trial_ids, starts = [], [], [], []
    for raw, label, k in load_subject_trials(manifest, data_dir):
        sig = dsp.preprocess_trial(dsp.Signal(raw, manifest.sample_rate),
                                   eeg_idx, mastoid_idx, eog_idx)
        for w in dsp.segment_windows(sig, label, k, manifest.subject_id,
                                     window_seconds, overlap):
            wins.append(w.data)
            labels.append(w.label)
            trial_ids.append(w.trial_id)
            starts.append(w.start_sample)
    names = [manifest.channel_names[i] for i in eeg_idx]
    return SubjectWindows(manifest.subject_id, np.array(wins), np.array(labels, dtype=np.float64),
                          np.array(trial_ids), np.array(starts), names, 128.0)


def build_images(subj: SubjectWindows, layout=None) -> np.ndarray:
    """Alpha-power topographic image per window, (n, 1, 32, 32)."""
    layout = layout or biosemi64_layout()
    out = np.empty((subj.windows.shape[0], 1, 32, 32))
    for i, w in enumerate(subj.windows):
        out[i, 0] = render(dsp.alpha_power(w, subj.sample_rate), layout).pixels
    return out


def evaluate(net: nn.Network, fetch, idx, batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, mean BCE loss) on the given indices, eval mode."""
    net.eval()
    correct = 0
    losses = []
    for i in range(0, idx.size, batch_size):
        x, y = fetch(idx[i:i + batch_size])
        logits = net.forward(x)[:, 0]
        loss, _ = nn.bce_with_logits(logits, y)
        losses.append(loss * y.size)
        correct += int(((logits > 0) == (y > 0.5)).sum())
    return correct / idx.size, sum(losses) / idx.size


def train_classifier(net: nn.Network, fetch, train_idx, val_idx, cfg: ExperimentConfig,
                     shuffle_rng: np.random.Generator) -> tuple[int, float, int, str]:
    """Adam/BCE training with early stopping on validation accuracy.

    Improvement means a strictly better (val_acc, -val_loss) pair, so ties
    keep the earlier epoch; the best epoch's weights are restored. Returns
    (epochs_run, best_val_acc, best_epoch, flag).
    """
    if val_idx.size == 0:
        raise ValueError("validation set is empty; early stopping needs one")
    opt = nn.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    best = (-1.0, -np.inf)
    best_state = net.state_dict()
    best_epoch = -1
    stale = 0
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        net.train()
        for i in range(0, order.size, cfg.batch_size):
            chunk = order[i:i + cfg.batch_size]
            if chunk.size < 2:     # BatchNorm needs batch statistics
                continue
            x, y = fetch(chunk)
            logits = net.forward(x)[:, 0]
            _, grad = nn.bce_with_logits(logits, y)
            net.zero_grad()
            net.backward(grad[:, None])
            opt.step()
        epochs_run = epoch + 1
        val_acc, val_loss = evaluate(net, fetch, val_idx)
        if (val_acc, -val_loss) > best:
            best = (val_acc, -val_loss)
            best_state = net.state_dict()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.load_state_dict(best_state)
    flag = "at_chance" if best[0] <= 0.5 else ""
    return epochs_run, best[0], best_epoch, flag


def run_stage1(cfg: ExperimentConfig, subj: SubjectWindows, images: np.ndarray | None = None,
               layout=None) -> Stage1Result:
    """Cross-validated CNN training plus attribution aggregation and ranking."""
    layout = layout or biosemi64_layout()
    if images is None:
        images = build_images(subj, layout)
    labels = subj.labels
    fetch = lambda ids: (images[ids], labels[ids])
    groups = subj.trial_ids if cfg.split_by_trial else None

    fold_results, states, maps, maps_per_fold = [], [], [], []
    for f in range(cfg.folds):
        tr, va, te = stratified_split(labels, cfg.fractions, seed=(cfg.seed, _SPLIT, f), groups=groups)
        net = models.build_cnn(_int_seed(cfg.seed, _INIT_CNN, f))
        epochs, best_val, _, flag = train_classifier(
            net, fetch, tr, va, cfg, _rng(cfg.seed, _SHUFFLE_CNN, f))
        test_acc, _ = evaluate(net, fetch, te)
        fold_results.append(FoldResult(f, "cnn", 64, test_acc, epochs, best_val, flag))
        states.append(net.state_dict())

        bg_idx = _rng(cfg.seed, _BACKGROUND, f).choice(
            tr, size=min(cfg.background_size, tr.size), replace=False)
        ex_idx = _rng(cfg.seed, _EXPLAIN, f).choice(
            te, size=min(cfg.explain_size, te.size), replace=False)
        explainer = DeepShapExplainer(net.eval(), images[bg_idx])
        for i in ex_idx:
            maps.append(explainer.attribute(images[i])[0])
        maps_per_fold.append(ex_idx.size)

    gmap = global_importance(np.array(maps))
    return Stage1Result(fold_results, states, gmap, rank_channels(gmap, layout), maps_per_fold)


def run_stage2(cfg: ExperimentConfig, subj: SubjectWindows, ranking: ChannelRanking) -> list[FoldResult]:
    """Train/evaluate the temporal ConvNet at every channel budget."""
    labels = subj.labels
    groups = subj.trial_ids if cfg.split_by_trial else None
    results = []
    for budget in cfg.budgets:
        chan_idx = np.array([subj.channel_names.index(nm) for nm in ranking.top(budget)])
        fetch = lambda ids: (subj.windows[ids][:, chan_idx, :].transpose(0, 2, 1), labels[ids])
        for f in range(cfg.folds):
            tr, va, te = stratified_split(labels, cfg.fractions, seed=(cfg.seed, _SPLIT, f), groups=groups)
            net = models.build_tcn(budget, _int_seed(cfg.seed, _INIT_TCN, f, budget))
            epochs, best_val, _, flag = train_classifier(
                net, fetch, tr, va, cfg, _rng(cfg.seed, _SHUFFLE_TCN, f, budget))
            test_acc, _ = evaluate(net, fetch, te)
            results.append(FoldResult(f, "tcn", budget, test_acc, epochs, best_val, flag))
    return results


# ---------------------------------------------------------------------------
# On-disk step functions behind the CLI. Each reads its inputs from run_dir
# and leaves artifacts there so the stages can also be driven one at a time.
# ---------------------------------------------------------------------------

def _run_path(cfg, name) -> Path:
    p = Path(cfg.run_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p / name


def journal(cfg: ExperimentConfig, message: str) -> None:
    with open(_run_path(cfg, "run.log"), "a") as fh:
        fh.write(message + "\n")


def step_preprocess(cfg: ExperimentConfig, subject_id: str) -> SubjectWindows:
    manifest = SubjectManifest.load(Path(cfg.data_dir) / f"{subject_id}_manifest.json")
    subj = preprocess_subject(manifest, cfg.data_dir, cfg.window_seconds, cfg.overlap)
    np.savez(_run_path(cfg, f"{subject_id}_windows.npz"),
             windows=subj.windows, labels=subj.labels, trial_ids=subj.trial_ids,
             starts=subj.starts, channel_names=np.array(subj.channel_names),
             sample_rate=subj.sample_rate)
    images = build_images(subj)
    np.savez(_run_path(cfg, f"{subject_id}_images.npz"), images=images)
    journal(cfg, f"stage=preprocess subject={subject_id} windows={subj.windows.shape[0]}")
    return subj


def _load_windows(cfg, subject_id) -> SubjectWindows:
    z = np.load(_run_path(cfg, f"{subject_id}_windows.npz"), allow_pickle=False)
    return SubjectWindows(subject_id, z["windows"], z["labels"], z["trial_ids"],
                          z["starts"], [str(s) for s in z["channel_names"]],
                          float(z["sample_rate"]))


def step_train_cnn(cfg: ExperimentConfig, subject_id: str) -> Stage1Result:
    subj = _load_windows(cfg, subject_id)
    images = np.load(_run_path(cfg, f"{subject_id}_images.npz"))["images"]
    result = run_stage1(cfg, subj, images)

    state_blob = {}
    for f, state in enumerate(result.states):
        for key, arr in state.items():
            state_blob[f"fold{f}:{key}"] = arr
    np.savez(_run_path(cfg, f"{subject_id}_cnn.npz"), **state_blob)
    rows = [{"fold": r.fold, "test_accuracy": r.test_accuracy, "epochs": r.epochs,
             "best_val_accuracy": r.best_val_accuracy, "flag": r.flag}
            for r in result.fold_results]
    _run_path(cfg, f"{subject_id}_cnn.json").write_text(json.dumps(rows, indent=2) + "\n")
    np.save(_run_path(cfg, f"{subject_id}_shap.npy"), result.global_map)
    mean_acc = float(np.mean([r.test_accuracy for r in result.fold_results]))
    n_flagged = sum(1 for r in result.fold_results if r.flag)
    journal(cfg, f"stage=train-cnn subject={subject_id} folds={cfg.folds} "
                 f"mean_test_acc={mean_acc:.6f} flagged={n_flagged} "
                 f"maps={sum(result.maps_per_fold)}")
    return result


def step_select(cfg: ExperimentConfig, subject_id: str) -> ChannelRanking:
    gmap = np.load(_run_path(cfg, f"{subject_id}_shap.npy"))
    ranking = rank_channels(gmap, biosemi64_layout())
    lines = ["rank,channel,score"]
    lines += [f"{i + 1},{name},{score:.10g}" for i, (name, score) in enumerate(ranking)]
    _run_path(cfg, f"{subject_id}_ranking.csv").write_text("\n".join(lines) + "\n")
    journal(cfg, f"stage=select subject={subject_id} top8={','.join(ranking.top(8))}")
    return ranking


def load_ranking(cfg: ExperimentConfig, subject_id: str) -> ChannelRanking:
    text = _run_path(cfg, f"{subject_id}_ranking.csv").read_text().splitlines()[1:]
    names, scores = [], []
    for line in text:
        _, name, score = line.split(",")
        names.append(name)
        scores.append(float(score))
    # rows are already rank-ordered; the constructor's stable sort keeps them
    return ChannelRanking(names, np.array(scores))


def step_train_tcn(cfg: ExperimentConfig, subject_id: str) -> list[FoldResult]:
    subj = _load_windows(cfg, subject_id)
    ranking = load_ranking(cfg, subject_id)
    results = run_stage2(cfg, subj, ranking)
    rows = [{"budget": r.budget, "fold": r.fold, "test_accuracy": r.test_accuracy,
             "epochs": r.epochs, "best_val_accuracy": r.best_val_accuracy, "flag": r.flag}
            for r in results]
    _run_path(cfg, f"{subject_id}_tcn.json").write_text(json.dumps(rows, indent=2) + "\n")
    for budget in cfg.budgets:
        accs = [r.test_accuracy for r in results if r.budget == budget]
        journal(cfg, f"stage=train-tcn subject={subject_id} budget={budget} "
                     f"mean_test_acc={float(np.mean(accs)):.6f}")
    return results


def write_complexity_csv(path, budgets=(64, 48, 32, 16, 8)) -> None:
    rows = models.complexity_table(budgets)
    lines = ["channels,params,params_m,macs,mmacs"]
    lines += [f"{c},{p},{pm},{m},{mm}" for c, p, pm, m, mm in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def step_report(cfg: ExperimentConfig) -> None:
    """Aggregate per-subject artifacts into the final CSV/PGM report set."""
    run = Path(cfg.run_dir)
    layout = biosemi64_layout()

    acc_lines = ["subject,budget,fold,accuracy"]
    cnn_lines = ["subject,fold,accuracy,epochs,flag"]
    rank_lines = ["subject,rank,channel,score"]
    per_budget: dict[int, list[float]] = {b: [] for b in cfg.budgets}

    for sid in cfg.subjects:
        for row in json.loads((run / f"{sid}_cnn.json").read_text()):
            cnn_lines.append(f"{sid},{row['fold']},{row['test_accuracy']:.6f},"
                             f"{row['epochs']},{row['flag']}")
        for row in json.loads((run / f"{sid}_tcn.json").read_text()):
            acc_lines.append(f"{sid},{row['budget']},{row['fold']},{row['test_accuracy']:.6f}")
            per_budget[row["budget"]].append(row["test_accuracy"])
        for line in (run / f"{sid}_ranking.csv").read_text().splitlines()[1:]:
            rank_lines.append(f"{sid},{line}")

        gmap = np.load(run / f"{sid}_shap.npy")
        save_pgm(gmap, run / f"global_shap_{sid}.pgm")
        np.savetxt(run / f"global_shap_{sid}.csv", gmap, fmt="%.10g", delimiter=",")
        subj = _load_windows(cfg, sid)
        topo = render(dsp.alpha_power(subj.windows[0], subj.sample_rate), layout)
        save_pgm(topo.pixels, run / f"topo_example_{sid}.pgm")

    (run / "accuracy.csv").write_text("\n".join(acc_lines) + "\n")
    (run / "cnn_accuracy.csv").write_text("\n".join(cnn_lines) + "\n")
    (run / "ranking.csv").write_text("\n".join(rank_lines) + "\n")
    summary = ["budget,mean,std"]
    for b in cfg.budgets:
        accs = np.array(per_budget[b])
        summary.append(f"{b},{accs.mean():.6f},{accs.std():.6f}")
    (run / "summary.csv").write_text("\n".join(summary) + "\n")
    write_complexity_csv(run / "complexity.csv", cfg.budgets)
    journal(cfg, f"stage=report subjects={len(cfg.subjects)}")


def run_all(cfg: ExperimentConfig) -> None:
    """synth data must already exist; runs every stage for every subject."""
    journal(cfg, f"config_hash={cfg.hash()} seed={cfg.seed}")
    for sid in cfg.subjects:
        step_preprocess(cfg, sid)
        step_train_cnn(cfg, sid)
        step_select(cfg, sid)
        step_train_tcn(cfg, sid)
    step_report(cfg)
