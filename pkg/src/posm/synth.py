"""Seeded synthetic handwriting for desk-scale experiments.

Every writer gets a style (slant, glyph size and aspect, pen speed, loop
tendency, private glyph variants). Paragraphs are words built from a shared
alphabet of smooth pseudo-glyphs, rendered in that style and resampled at a
fixed clock, so pen speed shows up as point spacing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ink import Corpus, Stroke, StrokeSet, paragraph_splits

SAMPLE_MS = 10.0
N_GLYPHS = 12
N_HARMONICS = 3


@dataclass(frozen=True)
class WriterStyle:
    slant: float
    height: float
    aspect: float
    speed: float  # device units per millisecond
    loop_amp: float
    loop_freq: float
    jitter: float
    gender: str
    handedness: str
    glyph_offsets: np.ndarray  # (N_GLYPHS, 4, N_HARMONICS) private variants


def _alphabet(rng: np.random.Generator) -> np.ndarray:
    """Fourier coefficients per glyph: [x_amp, x_phase, y_amp, y_phase] x harmonics."""
    coef = np.empty((N_GLYPHS, 4, N_HARMONICS))
    decay = 1.0 / np.arange(1, N_HARMONICS + 1)
    coef[:, 0] = rng.uniform(0.1, 0.35, (N_GLYPHS, N_HARMONICS)) * decay
    coef[:, 1] = rng.uniform(0, 2 * np.pi, (N_GLYPHS, N_HARMONICS))
    coef[:, 2] = rng.uniform(0.25, 0.6, (N_GLYPHS, N_HARMONICS)) * decay
    coef[:, 3] = rng.uniform(0, 2 * np.pi, (N_GLYPHS, N_HARMONICS))
    return coef


def writer_speeds(n_writers: int, speed_gap: float, rng: np.random.Generator) -> np.ndarray:
    """Pen speeds on a grid of spacing ``1.5 * speed_gap``, shuffled across writers.

    The margin over ``speed_gap`` absorbs per-word tempo jitter and integer
    rounding, so measured speeds stay ``speed_gap`` apart."""
    grid = 0.25 + 1.5 * speed_gap * np.arange(n_writers)
    return grid[rng.permutation(n_writers)]


def _make_styles(n_writers: int, speed_gap: float, rng: np.random.Generator) -> list[WriterStyle]:
    n_left = max(1, int(round(n_writers / 5)))
    lefties = set(rng.choice(n_writers, size=n_left, replace=False).tolist())
    genders = np.array(["male", "female"] * ((n_writers + 1) // 2))[:n_writers]
    genders = genders[rng.permutation(n_writers)]
    speeds = writer_speeds(n_writers, speed_gap, rng)
    styles = []
    for w in range(n_writers):
        left = w in lefties
        female = genders[w] == "female"
        styles.append(WriterStyle(
            slant=rng.uniform(-0.45, 0.0) if left else rng.uniform(0.05, 0.5),
            height=rng.uniform(14, 20) if female else rng.uniform(18, 26),
            aspect=rng.uniform(0.7, 1.3),
            speed=float(speeds[w]),
            loop_amp=rng.uniform(0.0, 0.25),
            loop_freq=rng.uniform(2.0, 5.0),
            jitter=rng.uniform(0.01, 0.04),
            gender=str(genders[w]),
            handedness="left" if left else "right",
            glyph_offsets=rng.normal(0.0, 0.08, (N_GLYPHS, 4, N_HARMONICS)),
        ))
    return styles


def _glyph_curve(coef: np.ndarray, loop_amp: float, loop_freq: float, n: int = 64) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    k = np.arange(1, N_HARMONICS + 1)[:, None]
    x = s + (coef[0][:, None] * np.sin(2 * np.pi * k * s + coef[1][:, None])).sum(0)
    y = (coef[2][:, None] * np.sin(2 * np.pi * k * s + coef[3][:, None])).sum(0)
    x += loop_amp * np.cos(2 * np.pi * loop_freq * s)
    y += loop_amp * np.sin(2 * np.pi * loop_freq * s)
    return np.stack([x - x[0], y - y[0]], axis=1)


def _resample(path: np.ndarray, step: float) -> np.ndarray:
    """Points along ``path`` with consecutive straight-line distance ``step``.

    Each sample is the first place on the path where the pen is ``step`` away
    from the previous sample, so displacement per clock tick is exactly the
    writer's speed even on tight curves.
    """
    out = [path[0]]
    cur, j = path[0], 1
    while j < len(path):
        d = np.linalg.norm(path[j:] - cur, axis=1)
        hit = np.nonzero(d >= step)[0]
        if len(hit) == 0:
            break
        k = j + hit[0]
        # solve |a + u (b - a) - cur| = step for u in [0, 1] on segment (k-1, k)
        a_, b_ = path[k - 1], path[k]
        seg, rel = b_ - a_, a_ - cur
        qa, qb, qc = seg @ seg, 2 * rel @ seg, rel @ rel - step * step
        u = (-qb + np.sqrt(max(qb * qb - 4 * qa * qc, 0.0))) / (2 * qa)
        cur = a_ + min(max(u, 0.0), 1.0) * seg
        out.append(cur)
        j = k
    if len(out) == 1:
        out.append(path[-1])
    return np.asarray(out)


def _word_path(glyphs: list[int], alphabet: np.ndarray, style: WriterStyle,
               rng: np.random.Generator) -> np.ndarray:
    pieces, x_off = [], 0.0
    for g in glyphs:
        coef = alphabet[g] + style.glyph_offsets[g] + rng.normal(0.0, style.jitter, alphabet[g].shape)
        curve = _glyph_curve(coef, style.loop_amp, style.loop_freq)
        curve[:, 0] += x_off
        if pieces:
            curve[:, 1] += pieces[-1][-1, 1]
            curve[:, 0] += pieces[-1][-1, 0] - curve[0, 0]
        x_off = curve[-1, 0]
        pieces.append(curve)
    path = np.concatenate(pieces, axis=0)
    path[:, 0] *= style.aspect
    path *= style.height
    path[:, 0] += style.slant * path[:, 1]
    return path


def synth_paragraph(style: WriterStyle, alphabet: np.ndarray, rng: np.random.Generator,
                    sid: str, writer: str, n_words: int, line_width: float = 600.0) -> StrokeSet:
    strokes: list[Stroke] = []
    t = 0.0
    cursor = np.array([0.0, 0.0])
    line_start_x = 0.0
    for _ in range(n_words):
        glyphs = rng.integers(0, N_GLYPHS, size=rng.integers(2, 6)).tolist()
        path = _word_path(glyphs, alphabet, style, rng) + cursor
        step = style.speed * SAMPLE_MS * rng.uniform(0.98, 1.02)
        pts = np.round(_resample(path, step))
        times = t + SAMPLE_MS * np.arange(len(pts))
        strokes.append(Stroke(np.column_stack([pts, times]), True))
        t = times[-1] + SAMPLE_MS

        gap = style.height * rng.uniform(0.5, 1.0)
        nxt = np.array([pts[-1, 0] + gap, cursor[1] + rng.normal(0.0, 1.0)])
        if nxt[0] - line_start_x > line_width:
            nxt = np.array([line_start_x, cursor[1] + 2.5 * style.height])
        air = np.round(np.linspace(pts[-1], nxt, 4)[1:])
        air_t = t + SAMPLE_MS * np.arange(len(air))
        strokes.append(Stroke(np.column_stack([air, air_t]), False))
        t = air_t[-1] + SAMPLE_MS
        cursor = nxt
    meta = {"gender": style.gender, "handedness": style.handedness}
    return StrokeSet(sid, writer, tuple(strokes[:-1]), meta)


def synth_corpus(n_writers: int, paragraphs_per_writer: int, seed: int,
                 words_per_paragraph: int = 6, speed_gap: float = 0.02) -> Corpus:
    """Deterministic synthetic corpus.

    Splits follow ``paragraph_splits`` per writer. Measured mean pen speeds of
    any two writers differ by at least ``speed_gap`` units/ms.
    """
    if n_writers < 2:
        raise ValueError("n_writers must be at least 2")
    if paragraphs_per_writer < 1:
        raise ValueError("paragraphs_per_writer must be positive")
    root = np.random.SeedSequence(int(seed) & (2**64 - 1))
    alpha_ss, style_ss, para_ss = root.spawn(3)
    alphabet = _alphabet(np.random.default_rng(alpha_ss))
    styles = _make_styles(n_writers, speed_gap, np.random.default_rng(style_ss))
    para_seeds = para_ss.spawn(n_writers * paragraphs_per_writer)

    tags = paragraph_splits(paragraphs_per_writer)
    strokesets, splits = [], {}
    for w, style in enumerate(styles):
        writer = f"w{w:03d}"
        for p in range(paragraphs_per_writer):
            sid = f"{writer}-p{p:02d}"
            rng = np.random.default_rng(para_seeds[w * paragraphs_per_writer + p])
            strokesets.append(synth_paragraph(style, alphabet, rng, sid, writer, words_per_paragraph))
            splits[sid] = tags[p]
    return Corpus(tuple(strokesets), splits)


def writer_styles(n_writers: int, seed: int, speed_gap: float = 0.02) -> list[WriterStyle]:
    """The styles ``synth_corpus`` assigns for the same arguments."""
    root = np.random.SeedSequence(int(seed) & (2**64 - 1))
    _, style_ss, _ = root.spawn(3)
    return _make_styles(n_writers, speed_gap, np.random.default_rng(style_ss))
