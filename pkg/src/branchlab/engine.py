"""Exact forward simulation of the branching population with full genealogy.

Simulation proceeds generation-wave by generation-wave over a batch of
replicates at once.  Each particle's lifetime, offspring count and per-life
displacement come from slots of a key hashed from (run key, particle id), so
a replicate's realization is invariant to batching, wave layout and thread
count; `run_once` on a single replicate reproduces byte-for-byte what the
batched drivers produce for the same key.  Particle ids are assigned in
generation order (parents always precede children).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.special import ndtri

from .model import MotionLaw, ValidatedModel
from .rng import RandomStream, _derive_fast, derive_key, slot_hash, slot_uniform

DEFAULT_PARTICLE_CAP = 10_000_000
DEFAULT_MAX_ATTEMPTS = 100_000

_H_LIFETIME = slot_hash(0)
_H_OFFSPRING = slot_hash(1)
_H_DISPLACEMENT = slot_hash(2)


class CapExceeded(RuntimeError):
    """Live-record count passed the particle cap; the run is aborted loudly."""

    def __init__(self, replicates):
        self.replicates = [int(r) for r in np.atleast_1d(replicates)]
        super().__init__(f"particle cap exceeded in replicate(s) {self.replicates}")


class MaxAttemptsExceeded(RuntimeError):
    pass


class HorizonExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenealogyArena:
    """Append-only particle table for one run, in id order.

    `lifetime` stores the full drawn lifetime even when the particle outlives
    the horizon; `displacement` covers motion from max(birth, 0) to
    min(death, horizon).  `position` caches the particle's location at the
    end of that covered span (prefix sum of displacements along its
    ancestry).  The motion law rides along so intermediate-time snapshots can
    draw exact bridges.
    """

    parent: np.ndarray
    birth: np.ndarray
    lifetime: np.ndarray
    displacement: np.ndarray
    position: np.ndarray
    alive: np.ndarray
    horizon: float
    initial_age: float
    initial_position: float
    motion: MotionLaw

    def __len__(self) -> int:
        return self.parent.size

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive)


@dataclass(frozen=True)
class Snapshot:
    """Alive configuration at a horizon: (age, position, id) per particle."""

    ages: np.ndarray
    positions: np.ndarray
    ids: np.ndarray
    horizon: float

    @property
    def n_alive(self) -> int:
        return self.ages.size


@dataclass(frozen=True)
class RunRecord:
    arena: GenealogyArena
    snapshot: Snapshot
    attempts: int
    seed_path: tuple


# ---------------------------------------------------------------------------
# the wave core
# ---------------------------------------------------------------------------


class _ArenaAccum:
    __slots__ = ("rep", "parent", "birth", "lifetime", "disp", "pos", "alive")

    def __init__(self):
        self.rep, self.parent, self.birth = [], [], []
        self.lifetime, self.disp, self.pos, self.alive = [], [], [], []


def _batch_simulate(
    model: ValidatedModel,
    horizon: float,
    run_keys: np.ndarray,
    root_rep: np.ndarray,
    root_birth: np.ndarray,
    root_position: np.ndarray,
    particle_cap: int,
    mode: str,
    rep_labels: Optional[np.ndarray] = None,
):
    """Simulate every replicate in the batch to `horizon`.

    run_keys: one uint64 key per replicate.  Roots must be sorted by rep.
    mode: "arena" returns full per-particle columns plus per-rep bounds;
    "snapshot" returns alive rows only; "counts" returns N_t per replicate.
    """
    n_rep = run_keys.size
    law = model.lifetime
    motion = model.motion
    cum = model.offspring_cumulative()
    horizon = float(horizon)

    rep = np.asarray(root_rep, dtype=np.int64)
    parent = np.full(rep.size, -1, dtype=np.int64)
    birth = np.asarray(root_birth, dtype=float)
    pos_start = np.asarray(root_position, dtype=float)

    root_counts = np.bincount(rep, minlength=n_rep)
    starts = np.concatenate(([0], np.cumsum(root_counts)))[:-1]
    local = np.arange(rep.size, dtype=np.int64) - starts[rep]
    next_id = root_counts.astype(np.int64)

    records = np.zeros(n_rep, dtype=np.int64)
    counts_alive = np.zeros(n_rep, dtype=np.int64)
    acc = _ArenaAccum() if mode == "arena" else None
    snap_rep, snap_birth, snap_pos = [], [], []

    wave = 0
    while rep.size:
        keys = _derive_fast(run_keys[rep], local.view(np.uint64))

        u_life = slot_uniform(keys, _H_LIFETIME)
        if wave == 0:
            init_age = -birth
            conditioned = init_age > 0
            if np.any(conditioned):
                g0 = np.asarray(law.cdf(init_age[conditioned]), dtype=float)
                if np.any(g0 >= 1.0):
                    raise ValueError("initial age beyond lifetime support")
                u_life = u_life.copy()
                u_life[conditioned] = g0 + u_life[conditioned] * (1.0 - g0)
        lifetime = np.asarray(law.ppf(u_life), dtype=float)
        death = birth + lifetime
        alive = death > horizon

        duration = np.minimum(death, horizon) - np.maximum(birth, 0.0)
        z = ndtri(slot_uniform(keys, _H_DISPLACEMENT))
        disp = np.sqrt(np.asarray(motion.variance(duration), dtype=float)) * z
        pos_end = pos_start + disp

        records += np.bincount(rep, minlength=n_rep)
        if np.any(records > particle_cap):
            bad = np.flatnonzero(records > particle_cap)
            raise CapExceeded(rep_labels[bad] if rep_labels is not None else bad)

        if mode == "arena":
            acc.rep.append(rep)
            acc.parent.append(parent)
            acc.birth.append(birth)
            acc.lifetime.append(lifetime)
            acc.disp.append(disp)
            acc.pos.append(pos_end)
            acc.alive.append(alive)
        elif mode == "snapshot":
            snap_rep.append(rep[alive])
            snap_birth.append(birth[alive])
            snap_pos.append(pos_end[alive])
        counts_alive += np.bincount(rep[alive], minlength=n_rep)

        dead = ~alive
        if not np.any(dead):
            break
        u_off = slot_uniform(keys[dead], _H_OFFSPRING)
        n_children = np.searchsorted(cum, u_off, side="right").astype(np.int64)
        has = n_children > 0
        if not np.any(has):
            break
        src = np.flatnonzero(dead)[has]
        kids = n_children[has]
        child_rep = np.repeat(rep[src], kids)
        child_parent = np.repeat(local[src], kids)
        child_birth = np.repeat(death[src], kids)
        child_pos = np.repeat(pos_end[src], kids)

        grp_counts = np.bincount(child_rep, minlength=n_rep)
        grp_starts = np.concatenate(([0], np.cumsum(grp_counts)))[:-1]
        child_local = next_id[child_rep] + (
            np.arange(child_rep.size, dtype=np.int64) - grp_starts[child_rep]
        )
        next_id += grp_counts

        rep, parent, birth, pos_start, local = (
            child_rep,
            child_parent,
            child_birth,
            child_pos,
            child_local,
        )
        wave += 1

    if mode == "counts":
        return counts_alive
    if mode == "snapshot":
        if snap_rep:
            return (
                np.concatenate(snap_rep),
                horizon - np.concatenate(snap_birth),
                np.concatenate(snap_pos),
                counts_alive,
            )
        return np.empty(0, np.int64), np.empty(0), np.empty(0), counts_alive

    cols = {
        "rep": np.concatenate(acc.rep),
        "parent": np.concatenate(acc.parent),
        "birth": np.concatenate(acc.birth),
        "lifetime": np.concatenate(acc.lifetime),
        "disp": np.concatenate(acc.disp),
        "pos": np.concatenate(acc.pos),
        "alive": np.concatenate(acc.alive),
    }
    order = np.argsort(cols["rep"], kind="stable")
    for k in cols:
        cols[k] = cols[k][order]
    bounds = np.searchsorted(cols["rep"], np.arange(n_rep + 1))
    return cols, bounds, counts_alive


def _single_root_arrays(n_rep: int, model: ValidatedModel):
    rep = np.arange(n_rep, dtype=np.int64)
    birth = np.full(n_rep, -model.initial_age, dtype=float)
    pos = np.full(n_rep, model.initial_position, dtype=float)
    return rep, birth, pos


def _extract_run(model, horizon, cols, bounds, r, attempts, seed_path) -> RunRecord:
    sl = slice(bounds[r], bounds[r + 1])
    arena = GenealogyArena(
        parent=np.ascontiguousarray(cols["parent"][sl]),
        birth=np.ascontiguousarray(cols["birth"][sl]),
        lifetime=np.ascontiguousarray(cols["lifetime"][sl]),
        displacement=np.ascontiguousarray(cols["disp"][sl]),
        position=np.ascontiguousarray(cols["pos"][sl]),
        alive=np.ascontiguousarray(cols["alive"][sl]),
        horizon=float(horizon),
        initial_age=model.initial_age,
        initial_position=model.initial_position,
        motion=model.motion,
    )
    ids = arena.alive_ids()
    snapshot = Snapshot(
        ages=horizon - arena.birth[ids],
        positions=arena.position[ids],
        ids=ids,
        horizon=float(horizon),
    )
    return RunRecord(arena=arena, snapshot=snapshot, attempts=attempts, seed_path=seed_path)


# ---------------------------------------------------------------------------
# public drivers
# ---------------------------------------------------------------------------


def run_once(
    model: ValidatedModel,
    horizon: float,
    rng: RandomStream,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
) -> RunRecord:
    """One unconditioned run from a single root; deterministic in rng.key."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rep, birth, pos = _single_root_arrays(1, model)
    keys = np.array([rng.key], dtype=np.uint64)
    cols, bounds, _ = _batch_simulate(model, horizon, keys, rep, birth, pos, particle_cap, "arena")
    return _extract_run(model, horizon, cols, bounds, 0, 1, rng.path)


def run_conditioned(
    model: ValidatedModel,
    horizon: float,
    rng: RandomStream,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> RunRecord:
    """Rejection-sample until the population survives the horizon.

    Attempt a uses the substream rng.child(a); the returned attempt count is
    an unbiased geometric sample with success probability P(N_t > 0).
    """
    for attempt in range(max_attempts):
        record = run_once(model, horizon, rng.child(attempt), particle_cap)
        if record.snapshot.n_alive > 0:
            return RunRecord(
                arena=record.arena,
                snapshot=record.snapshot,
                attempts=attempt + 1,
                seed_path=rng.path,
            )
    raise MaxAttemptsExceeded(f"no survival in {max_attempts} attempts at t={horizon}")


def _replicate_keys(rng: RandomStream, start: int, stop: int) -> np.ndarray:
    return derive_key(np.uint64(rng.key), np.arange(start, stop, dtype=np.uint64))


def survival_counts(
    model: ValidatedModel,
    horizon: float,
    rng: RandomStream,
    reps: int,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    threads: int = 1,
    chunk_size: int = 8192,
) -> np.ndarray:
    """N_t for `reps` unconditioned replicates (counts only, no genealogy).

    Replicate r's randomness is rng.child(r).child(0), matching the first
    attempt of the conditioned driver.  Chunk boundaries are fixed by
    chunk_size alone, so output is identical for any thread count.
    """
    spans = [(s, min(s + chunk_size, reps)) for s in range(0, reps, chunk_size)]

    def work(span):
        start, stop = span
        keys = derive_key(_replicate_keys(rng, start, stop), np.uint64(0))
        rep, birth, pos = _single_root_arrays(stop - start, model)
        return _batch_simulate(
            model, horizon, keys, rep, birth, pos, particle_cap, "counts",
            rep_labels=np.arange(start, stop),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(s) for s in spans]
    return np.concatenate(parts) if parts else np.empty(0, np.int64)


def _attempt_keys(rep_keys: np.ndarray, base: int, width: int) -> np.ndarray:
    """Keys for attempts base..base+width-1 of each replicate, rep-major."""
    attempts = np.tile(np.arange(base, base + width, dtype=np.uint64), rep_keys.size)
    return _derive_fast(np.repeat(rep_keys, width), attempts)


def conditioned_counts(
    model: ValidatedModel,
    horizon: float,
    rng: RandomStream,
    reps: int,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    chunk_size: int = 4096,
    attempt_block: int = 16,
):
    """(N_t, attempts) for `reps` conditioned replicates, counts only.

    Attempts are simulated `attempt_block` at a time and the first success is
    kept, which reproduces sequential rejection exactly (attempts are
    independently keyed) while cutting the number of vectorized rounds.
    """
    n_out = np.empty(reps, dtype=np.int64)
    att_out = np.empty(reps, dtype=np.int64)
    for start in range(0, reps, chunk_size):
        stop = min(start + chunk_size, reps)
        pending = np.arange(start, stop, dtype=np.int64)
        rep_keys = _replicate_keys(rng, start, stop)
        base = 0
        while pending.size:
            if base >= max_attempts:
                raise MaxAttemptsExceeded(
                    f"replicates {pending[:5]}... exceeded {max_attempts} attempts"
                )
            width = min(attempt_block, max_attempts - base)
            keys = _attempt_keys(rep_keys[pending - start], base, width)
            rep, birth, pos = _single_root_arrays(pending.size * width, model)
            counts = _batch_simulate(
                model, horizon, keys, rep, birth, pos, particle_cap, "counts",
                rep_labels=np.repeat(pending, width),
            ).reshape(pending.size, width)
            hit = counts > 0
            any_hit = hit.any(axis=1)
            first = np.argmax(hit, axis=1)
            done = pending[any_hit]
            n_out[done] = counts[any_hit, first[any_hit]]
            att_out[done] = base + first[any_hit] + 1
            pending = pending[~any_hit]
            base += width
    return n_out, att_out


def iter_runs(
    model: ValidatedModel,
    horizon: float,
    rng: RandomStream,
    reps: int,
    conditioned: bool = False,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    block_size: int = 512,
    attempt_block: int = 16,
) -> Iterator[RunRecord]:
    """Yield full RunRecords for replicates 0..reps-1 in replicate order.

    Simulates blocks of replicates at once; memory stays bounded by one
    block's arenas.  An unconditioned run is the attempt-0 realization of the
    conditioned driver, so the two agree run for run.  Conditioned rejection
    simulates attempts in blocks and keeps each replicate's first success,
    matching `run_conditioned` exactly.
    """
    for start in range(0, reps, block_size):
        stop = min(start + block_size, reps)
        rep_keys = _replicate_keys(rng, start, stop)
        results: dict[int, RunRecord] = {}
        pending = np.arange(start, stop, dtype=np.int64)
        base = 0
        while pending.size:
            if conditioned and base >= max_attempts:
                raise MaxAttemptsExceeded(
                    f"replicates {pending[:5]}... exceeded {max_attempts} attempts"
                )
            width = 1 if not conditioned else min(attempt_block, max_attempts - base)
            keys = _attempt_keys(rep_keys[pending - start], base, width)
            rep, birth, pos = _single_root_arrays(pending.size * width, model)
            cols, bounds, counts = _batch_simulate(
                model, horizon, keys, rep, birth, pos, particle_cap, "arena",
                rep_labels=np.repeat(pending, width),
            )
            counts = counts.reshape(pending.size, width)
            hit = counts > 0 if conditioned else np.ones_like(counts, dtype=bool)
            any_hit = hit.any(axis=1)
            first = np.argmax(hit, axis=1)
            for i in np.flatnonzero(any_hit):
                r = int(pending[i])
                results[r] = _extract_run(
                    model,
                    horizon,
                    cols,
                    bounds,
                    int(i) * width + int(first[i]),
                    base + int(first[i]) + 1,
                    rng.path + (r,),
                )
            pending = pending[~any_hit]
            base += width
            if not conditioned:
                break
        for r in range(start, stop):
            yield results[r]


def simulate_fields(
    model: ValidatedModel,
    horizon: float,
    run_keys: np.ndarray,
    root_rep: np.ndarray,
    root_birth: np.ndarray,
    root_position: np.ndarray,
    particle_cap: int = DEFAULT_PARTICLE_CAP,
):
    """Multi-root batch simulation keeping the alive rows only.

    Roots must be grouped by replicate in ascending order.  Returns
    (rep, ages, positions, counts): one row per particle alive at the
    horizon, plus the alive count per replicate.
    """
    return _batch_simulate(
        model,
        horizon,
        np.asarray(run_keys, dtype=np.uint64),
        root_rep,
        root_birth,
        root_position,
        particle_cap,
        "snapshot",
    )


# ---------------------------------------------------------------------------
# intermediate-time reconstruction
# ---------------------------------------------------------------------------


def snapshot_at(arena: GenealogyArena, t: float, rng: Optional[RandomStream] = None) -> Snapshot:
    """Reconstruct the alive configuration at time t <= horizon.

    Lives straddling t get their partial displacement from the Gaussian
    bridge consistent with the recorded full-span displacement: for elapsed
    motion s out of a covered span of length L with recorded displacement D,
    the increment is Normal((v(s)/v(L)) D, v(s)(1 - v(s)/v(L))).  Exact for
    every Gaussian-increment motion law.  Bridge draws are keyed by
    (rng.key, particle id); rng may be omitted when no life straddles t
    (t = horizon, or t at the root's birth).
    """
    if t > arena.horizon:
        raise HorizonExceeded(f"t={t} beyond arena horizon {arena.horizon}")
    if t < -arena.initial_age:
        raise ValueError("t precedes the root's birth")

    death = arena.birth + arena.lifetime
    alive_t = (arena.birth <= t) & (t < death)
    ids = np.flatnonzero(alive_t)

    birth = arena.birth[ids]
    motion_start = np.maximum(birth, 0.0)
    covered_end = np.minimum(death[ids], arena.horizon)
    elapsed = np.clip(t - motion_start, 0.0, None)
    span = covered_end - motion_start
    positions = arena.position[ids].copy()

    partial = elapsed < span
    if np.any(partial):
        if rng is None:
            raise ValueError("snapshot_at needs a RandomStream when t splits lives")
        pidx = np.flatnonzero(partial)
        sub = ids[pidx]
        vs = np.asarray(arena.motion.variance(elapsed[pidx]), dtype=float)
        vL = np.asarray(arena.motion.variance(span[pidx]), dtype=float)
        safe = np.where(vL > 0, vL, 1.0)
        ratio = np.where(vL > 0, vs / safe, 0.0)
        mean = ratio * arena.displacement[sub]
        var = np.maximum(vs * (1.0 - ratio), 0.0)
        bridge_keys = derive_key(np.uint64(rng.key), sub.astype(np.uint64))
        z = ndtri(slot_uniform(bridge_keys, _H_LIFETIME))
        pos_start = arena.position[sub] - arena.displacement[sub]
        positions[pidx] = pos_start + mean + np.sqrt(var) * z

    return Snapshot(ages=t - birth, positions=positions, ids=ids, horizon=float(t))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def run_to_jsonl(run: RunRecord) -> str:
    """One-run JSON line: seed path, attempts, N_t and snapshot entries."""
    payload = {
        "seed_path": list(run.seed_path),
        "attempts": run.attempts,
        "n_t": int(run.snapshot.n_alive),
        "horizon": run.snapshot.horizon,
        "snapshot": [
            [float(a), float(x), int(i)]
            for a, x, i in zip(run.snapshot.ages, run.snapshot.positions, run.snapshot.ids)
        ],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def arena_to_csv(arena: GenealogyArena) -> str:
    """Columnar CSV dump: id, parent, birth, lifetime, displacement, alive."""
    lines = ["id,parent,birth,lifetime,displacement,alive"]
    for i in range(len(arena)):
        lines.append(
            f"{i},{int(arena.parent[i])},{float(arena.birth[i])!r},{float(arena.lifetime[i])!r},"
            f"{float(arena.displacement[i])!r},{int(arena.alive[i])}"
        )
    return "\n".join(lines) + "\n"
