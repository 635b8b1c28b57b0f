"""Classical root-cause baselines.

Every method consumes the raw normal/anomalous matrices (plus the causal
graph for the graph-given methods) and emits a complete ranking over the
real nodes. Scores are comparable only within a method.
"""

import numpy as np

from .model import RankedResult

ANOMALY_THRESHOLD = 3.0  # z-score units


def anomaly_score(obs: np.ndarray, int_: np.ndarray) -> np.ndarray:
    """Per-node |mean shift| in units of the normal-window std."""
    obs = np.asarray(obs, dtype=float)
    int_ = np.asarray(int_, dtype=float)
    if obs.shape[0] < 2:
        raise ValueError("need at least two normal samples")
    denom = np.maximum(obs.std(axis=0), 1e-8)
    return np.abs(int_.mean(axis=0) - obs.mean(axis=0)) / denom


def traversal(dag, obs, int_, symptom, threshold: float = ANOMALY_THRESHOLD) -> RankedResult:
    """Graph walk: favour anomalous nodes reachable from the symptom
    through anomalous ancestors that themselves have no anomalous parent.

    Tiers: candidate roots first, then other anomalous nodes, then the
    rest; scores order nodes within each tier. With nothing anomalous the
    symptom itself is returned on top.
    """
    scores = anomaly_score(obs, int_)
    k = len(scores)
    symptom = int(symptom)
    anomalous = scores > threshold

    if not anomalous.any():
        tiers = np.full(k, 2.0)
        tiers[symptom] = 0.0
    else:
        # ancestors of the symptom reachable through anomalous nodes
        reach = set()
        frontier = [p for p in dag.parents[symptom] if anomalous[p]]
        if anomalous[symptom]:
            reach.add(symptom)
        while frontier:
            node = frontier.pop()
            if node in reach:
                continue
            reach.add(node)
            frontier.extend(p for p in dag.parents[node] if anomalous[p])
        tiers = np.full(k, 2.0)
        for node in range(k):
            if anomalous[node]:
                tiers[node] = 1.0
        for node in reach:
            if not any(anomalous[p] for p in dag.parents[node]):
                tiers[node] = 0.0
    # lexicographic: tier first, score second
    composite = -tiers * (scores.max() + 1.0) + scores
    return RankedResult(scores=composite, method="traversal")


def circa_score(dag, obs, int_, ridge: float = 1e-6) -> RankedResult:
    """Regression-residual scoring against the normal-window fit.

    Each node is regressed on its parents over the normal window; the
    anomalous rows are scored by their mean |standardised residual| under
    that fixed model. Nodes whose own conditional changed stand out,
    while downstream nodes are explained away by their observed parents.
    """
    obs = np.asarray(obs, dtype=float)
    int_ = np.asarray(int_, dtype=float)
    k = obs.shape[1]
    # standardise columns with normal-window stats so the ridge guard is
    # scale-free and the scores are invariant to joint column rescaling
    mu = obs.mean(axis=0)
    sd = np.maximum(obs.std(axis=0), 1e-8)
    obs_z = (obs - mu) / sd
    int_z = (int_ - mu) / sd
    scores = np.zeros(k)
    for node in range(k):
        parents = list(dag.parents[node])
        x_obs = np.column_stack([obs_z[:, parents], np.ones(obs.shape[0])]) \
            if parents else np.ones((obs.shape[0], 1))
        x_int = np.column_stack([int_z[:, parents], np.ones(int_.shape[0])]) \
            if parents else np.ones((int_.shape[0], 1))
        if obs.shape[0] < x_obs.shape[1] + 2:
            raise ValueError(f"need at least {x_obs.shape[1] + 2} normal rows for node {node}")
        gram = x_obs.T @ x_obs + ridge * np.eye(x_obs.shape[1])
        beta = np.linalg.solve(gram, x_obs.T @ obs_z[:, node])
        resid_obs = obs_z[:, node] - x_obs @ beta
        sigma = max(resid_obs.std(), 1e-8)
        resid_int = int_z[:, node] - x_int @ beta
        scores[node] = np.abs(resid_int / sigma).mean()
    return RankedResult(scores=scores, method="circa")


def correlation_rank(obs, int_, symptom) -> RankedResult:
    """|Pearson correlation| with the symptom column inside the anomalous
    window; the symptom itself is pushed out of first place."""
    int_ = np.asarray(int_, dtype=float)
    if int_.shape[0] < 3:
        raise ValueError("need at least three anomalous samples")
    symptom = int(symptom)
    k = int_.shape[1]
    ref = int_[:, symptom]
    scores = np.zeros(k)

    def degenerate(col):
        return col.std() <= 1e-12 * max(1.0, np.abs(col).max())

    ref_degenerate = degenerate(ref)
    for node in range(k):
        col = int_[:, node]
        if degenerate(col) or ref_degenerate:
            scores[node] = 0.0
        else:
            scores[node] = abs(np.corrcoef(col, ref)[0, 1])
    scores[symptom] = -1.0  # would trivially win with rho = 1
    return RankedResult(scores=scores, method="corr")


def _energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """2 E|X-Y| - E|X-X'| - E|Y-Y'| over the two 1-d samples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.abs(a[:, None] - b[None, :]).mean()
    within_a = np.abs(a[:, None] - a[None, :]).mean() if len(a) > 1 else 0.0
    within_b = np.abs(b[:, None] - b[None, :]).mean() if len(b) > 1 else 0.0
    return 2.0 * cross - within_a - within_b


def epsilon_diagnosis(obs, int_) -> RankedResult:
    """Two-sample energy-distance statistic per node, largest first."""
    obs = np.asarray(obs, dtype=float)
    int_ = np.asarray(int_, dtype=float)
    if obs.shape[0] < 2 or int_.shape[0] < 1:
        raise ValueError("need at least two normal rows and one anomalous row")
    scores = np.array([_energy_distance(obs[:, j], int_[:, j])
                       for j in range(obs.shape[1])])
    return RankedResult(scores=scores, method="eps")
