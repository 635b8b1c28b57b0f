"""Episodes: paired normal/anomalous data, symptom mask, and padding.

An episode is the unit of training and evaluation. Raw samples are
z-scored per node with statistics from the normal window only, clipped
to +-10, scaled by k_max / k_real so activation magnitude stays stable
across graph sizes, then zero-padded out to k_max node columns.
"""

import json
from dataclasses import dataclass, field

import numpy as np

CORPUS_FORMAT = "rcalab-episodes"
CORPUS_VERSION = 1
CLIP = 10.0
STD_FLOOR = 1e-8


@dataclass
class Episode:
    obs: np.ndarray          # [n_obs, k_max] normalised + padded
    int_: np.ndarray         # [n_int, k_max]
    mask: np.ndarray         # bool [k_max], symptom node(s)
    targets: tuple           # intervened node indices
    k_real: int
    pad_mask: np.ndarray     # bool [k_max], True at padded positions
    norm_stats: tuple = None  # (means, stds) from the normal window
    family: str = ""
    seed: int = -1

    @property
    def n_obs(self) -> int:
        return self.obs.shape[0]

    @property
    def n_int(self) -> int:
        return self.int_.shape[0]

    @property
    def k_max(self) -> int:
        return self.obs.shape[1]

    def target(self) -> int:
        """The single root cause; errors when several were injected."""
        if len(self.targets) != 1:
            raise ValueError(f"episode has {len(self.targets)} targets")
        return self.targets[0]

    def validate(self) -> None:
        k, kmax = self.k_real, self.k_max
        if not (1 <= k <= kmax):
            raise ValueError(f"k_real {k} out of range for k_max {kmax}")
        bound = CLIP * kmax / k + 1e-9
        for name, arr in (("obs", self.obs), ("int", self.int_)):
            if arr.shape[1] != kmax:
                raise ValueError(f"{name} has {arr.shape[1]} columns, expected {kmax}")
            if np.abs(arr).max(initial=0.0) > bound:
                raise ValueError(f"{name} values exceed the clip bound {bound}")
            if k < kmax and np.any(arr[:, k:] != 0.0):
                raise ValueError(f"{name} padded columns are not exactly zero")
        if not self.mask.any():
            raise ValueError("symptom mask is empty")
        if self.mask[k:].any():
            raise ValueError("symptom mask set on a padded position")
        if not all(0 <= t < k for t in self.targets):
            raise ValueError("target outside real nodes")
        if np.any(self.pad_mask[:k]) or not np.all(self.pad_mask[k:]):
            raise ValueError("pad_mask inconsistent with k_real")


def normalize_and_pad(obs_raw, int_raw, k_real: int, k_max: int):
    """Z-score with normal-window stats, clip, rescale, zero-pad.

    Returns (obs, int, pad_mask, (means, stds)). Constant columns hit the
    std floor and come out as zeros instead of NaN.
    """
    obs_raw = np.asarray(obs_raw, dtype=np.float64)
    int_raw = np.asarray(int_raw, dtype=np.float64)
    if obs_raw.ndim != 2 or obs_raw.shape[0] < 1:
        raise ValueError("observational data must be a non-empty matrix")
    if obs_raw.shape[1] != k_real or int_raw.shape[1] != k_real:
        raise ValueError("raw data width must equal k_real")
    if k_real > k_max:
        raise ValueError(f"k_real {k_real} exceeds k_max {k_max}")
    means = obs_raw.mean(axis=0)
    stds = np.maximum(obs_raw.std(axis=0), STD_FLOOR)
    scale = k_max / k_real

    def prep(arr):
        z = np.clip((arr - means) / stds, -CLIP, CLIP) * scale
        out = np.zeros((arr.shape[0], k_max), dtype=np.float64)
        out[:, :k_real] = z
        return out

    pad_mask = np.arange(k_max) >= k_real
    return prep(obs_raw), prep(int_raw), pad_mask, (means, stds)


def make_episode(obs_raw, int_raw, targets, symptom, k_max: int,
                 family: str = "", seed: int = -1) -> Episode:
    """Bundle raw matrices into a normalised, padded episode."""
    k_real = np.asarray(obs_raw).shape[1]
    obs, intv, pad_mask, stats = normalize_and_pad(obs_raw, int_raw, k_real, k_max)
    mask = np.zeros(k_max, dtype=bool)
    for node in np.atleast_1d(symptom):
        mask[int(node)] = True
    return Episode(
        obs=obs, int_=intv, mask=mask, targets=tuple(int(t) for t in targets),
        k_real=k_real, pad_mask=pad_mask, norm_stats=stats,
        family=family, seed=seed,
    )


# ---------------------------------------------------------------------------
# corpus serialization: line-delimited records with a schema header


def _round(arr):
    return [round(float(v), 9) for v in np.asarray(arr).reshape(-1)]


def episode_to_record(ep: Episode) -> dict:
    return {
        "k_real": ep.k_real,
        "n_obs": ep.n_obs,
        "n_int": ep.n_int,
        "obs": _round(ep.obs[:, : ep.k_real]),
        "int": _round(ep.int_[:, : ep.k_real]),
        "mask": [int(i) for i in np.flatnonzero(ep.mask)],
        "targets": list(ep.targets),
        "family": ep.family,
        "seed": ep.seed,
    }


def episode_from_record(rec: dict, k_max: int) -> Episode:
    k = int(rec["k_real"])
    n_obs, n_int = int(rec["n_obs"]), int(rec["n_int"])
    obs = np.zeros((n_obs, k_max))
    obs[:, :k] = np.asarray(rec["obs"], dtype=np.float64).reshape(n_obs, k)
    intv = np.zeros((n_int, k_max))
    intv[:, :k] = np.asarray(rec["int"], dtype=np.float64).reshape(n_int, k)
    mask = np.zeros(k_max, dtype=bool)
    mask[np.asarray(rec["mask"], dtype=int)] = True
    return Episode(
        obs=obs, int_=intv, mask=mask, targets=tuple(rec["targets"]),
        k_real=k, pad_mask=np.arange(k_max) >= k,
        family=rec.get("family", ""), seed=int(rec.get("seed", -1)),
    )


def write_corpus(path, episodes, k_max: int, meta: dict = None) -> int:
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "k_max": k_max}
    header.update(meta or {})
    n = 0
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ep in episodes:
            fh.write(json.dumps(episode_to_record(ep)) + "\n")
            n += 1
    return n


def read_corpus(path):
    """Yields (header, iterator of Episodes); validates the schema header."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{path}: not an episode corpus (format={header.get('format')!r})")
    if header.get("version") != CORPUS_VERSION:
        raise ValueError(f"{path}: corpus version {header.get('version')}, "
                         f"expected {CORPUS_VERSION}")
    k_max = int(header["k_max"])
    episodes = [episode_from_record(json.loads(ln), k_max) for ln in lines[1:] if ln.strip()]
    return header, episodes
