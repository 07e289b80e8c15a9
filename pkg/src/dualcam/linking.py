"""Find landmarks shared between aligned fragments and merge the duplicates."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .scene import CameraIntrinsics, FragmentMap, Landmark, Scene

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int32)


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit distance between uint8 descriptor arrays (broadcasting over leading axes)."""
    return _POPCOUNT[np.bitwise_xor(a, b)].sum(axis=-1)


def _desc_array(descs) -> np.ndarray:
    return np.frombuffer(b"".join(descs), dtype=np.uint8).reshape(-1, 32)


@dataclass(frozen=True)
class Candidate:
    keyframe_id: int
    landmark_id: int
    fragment_id: int  # fragment owning the landmark
    uv: tuple[float, float]  # predicted pixel
    depth: float


@dataclass
class MergeRecord:
    landmark_id: int  # landmark of the fragment being processed
    other_id: int  # landmark from another fragment
    other_fragment: int
    correspondences: int
    keyframes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def candidate_landmarks(
    frag: FragmentMap,
    others: list[FragmentMap],
    cameras: dict[str, CameraIntrinsics],
    radius: float,
    max_depth: float = 10.0,
) -> list[Candidate]:
    """Landmarks of other fragments that fall inside one of ``frag``'s keyframe views."""
    ids, owners, pos = [], [], []
    for other in others:
        if other.id == frag.id or other.excluded:
            continue
        for lm in other.landmarks.values():
            ids.append(lm.id)
            owners.append(other.id)
            pos.append(lm.position)
    if not ids:
        return []
    ids = np.array(ids)
    owners = np.array(owners)
    pos = np.array(pos)
    out = []
    for kf in frag.keyframes:
        cam = cameras[kf.camera]
        near = np.flatnonzero(np.linalg.norm(pos - kf.pose.t, axis=1) <= radius)
        if len(near) == 0:
            continue
        pc = (pos[near] - kf.pose.t) @ kf.pose.R
        z = pc[:, 2]
        ok = (z > 0) & (z <= max_depth)
        near, pc, z = near[ok], pc[ok], z[ok]
        uv = cam.project(pc)
        inside = cam.in_image(uv)
        for i, p, d in zip(near[inside], uv[inside], z[inside]):
            out.append(Candidate(kf.id, int(ids[i]), int(owners[i]), (float(p[0]), float(p[1])), float(d)))
    return out


def merge_landmarks(
    frag: FragmentMap,
    candidates: list[Candidate],
    landmarks: dict[int, Landmark],
    pixel_threshold: float = 4.0,
    descriptor_threshold: int = 50,
    min_correspondences: int = 2,
) -> list[MergeRecord]:
    """Match candidates to keypoints of ``frag`` and return the landmark pairs to merge.

    A candidate matches a keypoint when both the reprojection distance and the
    descriptor distance are under threshold (best descriptor wins). A pair is
    merged once ``min_correspondences`` keyframes agree on it.
    """
    by_kf: dict[int, list[Candidate]] = defaultdict(list)
    for c in candidates:
        by_kf[c.keyframe_id].append(c)
    votes: dict[tuple[int, int], list[int]] = defaultdict(list)
    owner: dict[int, int] = {}
    for kf in frag.keyframes:
        cands = by_kf.get(kf.id)
        if not cands or not kf.observations:
            continue
        kp_uv = np.array([o.uv for o in kf.observations])
        kp_desc = _desc_array([o.descriptor for o in kf.observations])
        kp_ids = [o.landmark_id for o in kf.observations]
        c_uv = np.array([c.uv for c in cands])
        c_desc = _desc_array([landmarks[c.landmark_id].descriptor for c in cands])
        pix = np.linalg.norm(c_uv[:, None, :] - kp_uv[None, :, :], axis=2)
        bits = hamming(c_desc[:, None, :], kp_desc[None, :, :])
        ok = (pix < pixel_threshold) & (bits < descriptor_threshold)
        for ci in np.flatnonzero(ok.any(axis=1)):
            cols = np.flatnonzero(ok[ci])
            best = cols[np.lexsort((pix[ci, cols], bits[ci, cols]))[0]]
            c = cands[ci]
            votes[(kp_ids[best], c.landmark_id)].append(kf.id)
            owner[c.landmark_id] = c.fragment_id

    # an outside landmark pairs with at most one landmark of this fragment
    best_for_other: dict[int, tuple[int, int]] = {}
    for (own, other), kfs in sorted(votes.items()):
        n = len(set(kfs))
        if n < min_correspondences:
            continue
        prev = best_for_other.get(other)
        if prev is None or n > prev[1]:
            best_for_other[other] = (own, n)
    records = []
    for other, (own, n) in sorted(best_for_other.items()):
        records.append(MergeRecord(own, other, owner[other], n, sorted(set(votes[(own, other)]))))
    return records


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


@dataclass
class LinkReport:
    records: list[MergeRecord]
    groups: list[list[int]]
    rejected: list[tuple[int, int]]

    @property
    def merged_pairs(self) -> set[tuple[int, int]]:
        """Every unordered landmark pair that ended up in one merge group."""
        out = set()
        for g in self.groups:
            for i, a in enumerate(g):
                for b in g[i + 1 :]:
                    out.add((min(a, b), max(a, b)))
        return out

    def to_dict(self) -> dict:
        return {
            "merge_groups": len(self.groups),
            "landmarks_removed": sum(len(g) - 1 for g in self.groups),
            "pairs": [r.to_dict() for r in self.records],
            "groups": self.groups,
            "rejected": [list(p) for p in self.rejected],
        }


def apply_merges(scene: Scene, records: list[MergeRecord]) -> LinkReport:
    """Merge landmark groups in place: lowest id survives, observations are
    rewritten, position is the observation-weighted mean.

    A merge that would make one keyframe observe the same landmark twice is
    rejected, so merging never breaks the per-keyframe uniqueness invariant.
    """
    landmarks = scene.landmark_map()
    home = {lid: frag for frag in scene.fragments for lid in frag.landmarks}
    uf = _UnionFind()
    members: dict[int, set[int]] = {}
    observers: dict[int, set[int]] = {}
    rejected = []
    pairs = sorted({(min(r.landmark_id, r.other_id), max(r.landmark_id, r.other_id)) for r in records})
    for a, b in pairs:
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        oa = observers.get(ra, landmarks[a].observers)
        ob = observers.get(rb, landmarks[b].observers)
        if oa & ob:
            rejected.append((a, b))
            continue
        uf.union(a, b)
        r = uf.find(a)
        members[r] = members.pop(ra, {a}) | members.pop(rb, {b})
        observers[r] = oa | ob
        observers.pop(ra if r != ra else rb, None)

    groups = sorted(sorted(m) for m in members.values())
    rewrite: dict[int, int] = {}
    for g in groups:
        keep = g[0]
        weights = np.array([len(landmarks[l].observers) for l in g], dtype=float)
        pos = np.array([landmarks[l].position for l in g])
        survivor = landmarks[keep]
        survivor.position = (weights[:, None] * pos).sum(axis=0) / weights.sum()
        for l in g[1:]:
            survivor.observers |= landmarks[l].observers
            del home[l].landmarks[l]
            rewrite[l] = keep
    if rewrite:
        for kf in scene.keyframes():
            for ob in kf.observations:
                if ob.landmark_id in rewrite:
                    ob.landmark_id = rewrite[ob.landmark_id]
    return LinkReport(records, groups, rejected)


def link_fragments(scene: Scene, options) -> LinkReport:
    """Collect candidates and correspondences for every active fragment (in id
    order, against the pre-merge map), then apply all merges at once."""
    active = sorted(scene.active_fragments(), key=lambda f: f.id)
    landmarks = scene.landmark_map()
    records: list[MergeRecord] = []
    for frag in active:
        cands = candidate_landmarks(frag, active, scene.cameras, options.radius, options.max_depth)
        records.extend(
            merge_landmarks(
                frag,
                cands,
                landmarks,
                options.pixel_threshold,
                options.descriptor_threshold,
                options.min_correspondences,
            )
        )
    return apply_merges(scene, records)


def true_duplicate_pairs(scene: Scene, landmark_ids=None) -> set[tuple[int, int]]:
    """Pairs of fragment landmarks that are copies of one true landmark (simulated scenes)."""
    if scene.truth is None:
        raise ValueError("scene has no ground truth")
    by_true: dict[int, list[int]] = defaultdict(list)
    for lid, tid in scene.truth.landmark_source.items():
        if landmark_ids is None or lid in landmark_ids:
            by_true[tid].append(lid)
    out = set()
    for ids in by_true.values():
        ids.sort()
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                out.add((a, b))
    return out
