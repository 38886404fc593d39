"""Synthetic experiment harness: ground-truth generation, noise injection,
dictionary-recovery experiments, measurement sweeps for guided
reconstruction, and a paired-modality image generator for desk-scale
end-to-end tests.

All randomness is driven by per-trial seeds derived from the master seed, so
reports are byte-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import CoupledDictionarySet, TrainConfig, TrainingBatch
from .imaging import Image
from .learning import (SingleModalitySet, learn_lr_guidance_dictionaries,
                       solve_hr_dictionaries, train_single_modality)
from .metrics import atom_recovery_ratio, rmse
from .sparse_coding import omp_batch, stack_joint_dictionary

# Per-trial SNR values are capped here; exact reconstructions would otherwise
# put +inf into trial averages.
_SNR_CAP_DB = 300.0


@dataclass(frozen=True)
class SynthConfig:
    """Ground-truth model sizes: signal dims N > M, K atoms per dictionary,
    T samples, per-part sparsities, optional input SNR, trial count, seed."""

    n: int
    m: int
    k: int
    t: int
    s_z: int
    s_u: int
    s_v: int
    input_snr_db: float | None = None
    trials: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.m < self.n:
            raise ValueError("need 1 <= M < N")
        if self.k < 1 or self.t < 1:
            raise ValueError("K and T must be >= 1")
        for name in ("s_z", "s_u", "s_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        total = self.s_z + self.s_u + self.s_v
        if not 1 <= total <= min(self.m + self.n, 3 * self.k):
            raise ValueError(
                f"total sparsity {total} infeasible: need 1 <= s <= "
                f"min(M+N, 3K) = {min(self.m + self.n, 3 * self.k)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def total_sparsity(self) -> int:
        return self.s_z + self.s_u + self.s_v


@dataclass(frozen=True)
class GroundTruth:
    """True dictionaries, the M x N row-selection operator, and the code
    matrices the training data was synthesized from."""

    dset: CoupledDictionarySet
    selector: np.ndarray          # (M, N) rows of the identity
    rows: np.ndarray              # (M,) selected row indices, sorted
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray


def _random_supports(rng: np.random.Generator, k: int, t: int, s: int) -> np.ndarray:
    """(K, T) code matrix: per column a uniform random size-s support with
    i.i.d. standard-normal values."""
    codes = np.zeros((k, t))
    if s == 0:
        return codes
    order = np.argsort(rng.random((t, k)), axis=1)[:, :s]
    vals = rng.standard_normal((t, s))
    codes[order.T, np.arange(t)[None, :]] = vals.T
    return codes


def gen_ground_truth(cfg: SynthConfig) -> GroundTruth:
    """Draw unit-norm Gaussian HR/guidance dictionaries, an M-row selector,
    LR dictionaries as row restrictions, and exact-sparsity codes."""
    rng = np.random.default_rng(cfg.seed)
    n, m, k = cfg.n, cfg.m, cfg.k

    def unit_gaussian(rows: int) -> np.ndarray:
        d = rng.standard_normal((rows, k))
        return d / np.linalg.norm(d, axis=0)

    psi_c_h = unit_gaussian(n)
    psi_h = unit_gaussian(n)
    phi_c = unit_gaussian(n)
    phi = unit_gaussian(n)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    selector = np.eye(n)[rows]
    z = _random_supports(rng, k, cfg.t, cfg.s_z)
    u = _random_supports(rng, k, cfg.t, cfg.s_u)
    v = _random_supports(rng, k, cfg.t, cfg.s_v)
    dset = CoupledDictionarySet(
        psi_c_l=psi_c_h[rows], psi_l=psi_h[rows],
        psi_c_h=psi_c_h, psi_h=psi_h, phi_c=phi_c, phi=phi)
    return GroundTruth(dset=dset, selector=selector, rows=rows, z=z, u=u, v=v)


def synthesize(gt: GroundTruth) -> TrainingBatch:
    """Generate (x_l, x_h, y) from the model; x_l is exactly the row
    restriction of x_h."""
    d = gt.dset
    x_h = d.psi_c_h @ gt.z + d.psi_h @ gt.u
    y = d.phi_c @ gt.z + d.phi @ gt.v
    x_l = x_h[gt.rows]
    return TrainingBatch(x_l=x_l, x_h=x_h, y=y)


def add_awgn(data, input_snr_db: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise scaled so the realized matrix-level SNR is
    ``input_snr_db``; +inf passes the data through unchanged."""
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(input_snr_db):
        if input_snr_db == math.inf:
            return data.copy()
        raise ValueError("input_snr_db must be finite or +inf")
    power = float(np.mean(data * data))
    if power == 0.0:
        raise ValueError("cannot set an SNR on a zero-power signal")
    sigma = math.sqrt(power / (10.0 ** (input_snr_db / 10.0)))
    rng = np.random.default_rng(seed)
    return data + sigma * rng.standard_normal(data.shape)


@dataclass
class ExperimentReport:
    """JSON-serializable experiment result: the configuration, one entry per
    setting (trial or sweep point), and aggregates."""

    config: dict
    per_setting: list[dict]
    aggregates: dict

    def to_json(self) -> str:
        payload = {"config": self.config, "per_setting": self.per_setting,
                   "aggregates": self.aggregates}
        return json.dumps(payload, sort_keys=True, indent=2)


def _trial_seeds(master: int, tag: int, count: int) -> list[int]:
    state = np.random.SeedSequence([master, tag]).generate_state(count, dtype=np.uint64)
    return [int(x) for x in state]


def _normalized(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=0)
    norms = np.where(norms == 0.0, 1.0, norms)
    return mat / norms


def _recovery_ratios(gt: GroundTruth, psi_c_l, psi_l, phi_c, phi,
                     epsilon: float) -> dict[str, float]:
    """The four Step-1 ratios.  True and learned atoms are column-normalized
    before matching: learned common atoms are unit only as stacked pairs, and
    true LR atoms are row restrictions of unit HR atoms."""
    d = gt.dset
    true_stack = _normalized(np.vstack([d.psi_c_l, d.phi_c]))
    learn_stack = _normalized(np.vstack([psi_c_l, phi_c]))
    return {
        "psi_c": atom_recovery_ratio(true_stack, learn_stack, epsilon),
        "phi_c": atom_recovery_ratio(_normalized(d.phi_c), _normalized(phi_c), epsilon),
        "psi": atom_recovery_ratio(_normalized(d.psi_l), _normalized(psi_l), epsilon),
        "phi": atom_recovery_ratio(_normalized(d.phi), _normalized(phi), epsilon),
    }


def run_cdl_recovery(cfg: SynthConfig, train_cfg: TrainConfig,
                     epsilon: float = 0.01,
                     workers: int | None = None) -> ExperimentReport:
    """Dictionary-recovery experiment: per trial, draw a fresh ground truth,
    synthesize training data, optionally add noise at ``cfg.input_snr_db``,
    run the two-step training, and score the four Step-1 dictionaries against
    the truth at threshold ``epsilon``.  Results are averaged over trials."""
    per_trial = []
    sum_trace_x = None
    sum_trace_y = None
    for trial in range(cfg.trials):
        seeds = _trial_seeds(cfg.seed, trial, 6)
        gt = gen_ground_truth(dataclasses.replace(cfg, seed=seeds[0]))
        batch = synthesize(gt)
        x_l, x_h, y = batch.x_l, batch.x_h, batch.y
        if cfg.input_snr_db is not None:
            x_l = add_awgn(x_l, cfg.input_snr_db, seeds[1])
            x_h = add_awgn(x_h, cfg.input_snr_db, seeds[2])
            y = add_awgn(y, cfg.input_snr_db, seeds[3])
        tcfg = dataclasses.replace(train_cfg, seed=seeds[4])
        dicts, codes, trace = learn_lr_guidance_dictionaries(
            x_l, y, tcfg, workers=workers)
        solve_hr_dictionaries(x_h, codes.z, codes.u, tcfg.ridge_lambda)

        ratios = _recovery_ratios(gt, dicts.psi_c_l, dicts.psi_l,
                                  dicts.phi_c, dicts.phi, epsilon)
        entry = {
            "trial": trial,
            "final_rmse_x": trace.rmse_x[-1],
            "final_rmse_y": trace.rmse_y[-1],
            "ratios": ratios,
        }
        per_trial.append(entry)
        tx = np.asarray(trace.rmse_x)
        ty = np.asarray(trace.rmse_y)
        sum_trace_x = tx if sum_trace_x is None else sum_trace_x + tx
        sum_trace_y = ty if sum_trace_y is None else sum_trace_y + ty

    nt = float(cfg.trials)
    mean_ratios = {key: sum(e["ratios"][key] for e in per_trial) / nt
                   for key in ("psi_c", "phi_c", "psi", "phi")}
    aggregates = {
        "mean_ratios": mean_ratios,
        "mean_ratio_overall": sum(mean_ratios.values()) / 4.0,
        "mean_final_rmse_x": sum(e["final_rmse_x"] for e in per_trial) / nt,
        "mean_final_rmse_y": sum(e["final_rmse_y"] for e in per_trial) / nt,
        "mean_rmse_x_trace": list(sum_trace_x / nt),
        "mean_rmse_y_trace": list(sum_trace_y / nt),
    }
    config = {
        "experiment": "cdl_recovery",
        "synth": dataclasses.asdict(cfg),
        "train": dataclasses.asdict(train_cfg),
        "epsilon": epsilon,
    }
    return ExperimentReport(config=config, per_setting=per_trial,
                            aggregates=aggregates)


@dataclass(frozen=True)
class CsrArms:
    """Solver dictionaries for the measurement sweep, all in the full N-dim
    space; per-M LR coding dictionaries are derived by row selection.

    The guided arm codes [A psi_c_x, A psi_x; phi_c, 0, phi] and reconstructs
    with (psi_c_h, psi_h); the no-guidance arm codes [A base_psi_c_x,
    A base_psi_x] and reconstructs with (base_psi_c_h, base_psi_h).
    """

    psi_c_x: np.ndarray
    psi_x: np.ndarray
    phi_c: np.ndarray
    phi: np.ndarray
    psi_c_h: np.ndarray
    psi_h: np.ndarray
    base_psi_c_x: np.ndarray
    base_psi_x: np.ndarray
    base_psi_c_h: np.ndarray
    base_psi_h: np.ndarray

    @classmethod
    def from_ground_truth(cls, gt: GroundTruth) -> "CsrArms":
        d = gt.dset
        return cls(psi_c_x=d.psi_c_h, psi_x=d.psi_h, phi_c=d.phi_c, phi=d.phi,
                   psi_c_h=d.psi_c_h, psi_h=d.psi_h,
                   base_psi_c_x=d.psi_c_h, base_psi_x=d.psi_h,
                   base_psi_c_h=d.psi_c_h, base_psi_h=d.psi_h)


def train_csr_arms(gt: GroundTruth, train_cfg: TrainConfig,
                   workers: int | None = None) -> CsrArms:
    """Learn both sweep arms from data synthesized at full measurement
    (the X-branch training signals are the HR signals themselves, so the
    learned X dictionaries live in the N-dim space and can be row-restricted
    to any M afterwards)."""
    batch = synthesize(gt)
    seeds = _trial_seeds(train_cfg.seed, 0x0C52, 2)
    dicts, codes, _trace = learn_lr_guidance_dictionaries(
        batch.x_h, batch.y, dataclasses.replace(train_cfg, seed=seeds[0]),
        workers=workers)
    psi_c_h, psi_h = solve_hr_dictionaries(batch.x_h, codes.z, codes.u,
                                           train_cfg.ridge_lambda)
    base: SingleModalitySet = train_single_modality(
        batch.x_h, batch.x_h, dataclasses.replace(train_cfg, seed=seeds[1]),
        workers=workers)
    return CsrArms(psi_c_x=dicts.psi_c_l, psi_x=dicts.psi_l,
                   phi_c=dicts.phi_c, phi=dicts.phi,
                   psi_c_h=psi_c_h, psi_h=psi_h,
                   base_psi_c_x=base.psi_c_l, base_psi_x=base.psi_l,
                   base_psi_c_h=base.psi_c_h, base_psi_h=base.psi_h)


def _per_column_snr_db(ref: np.ndarray, est: np.ndarray) -> np.ndarray:
    sig = np.sum(ref * ref, axis=0)
    err = np.sum((ref - est) ** 2, axis=0)
    floor = sig * 10.0 ** (-_SNR_CAP_DB / 10.0)
    return 10.0 * np.log10(sig / np.maximum(err, floor))


def run_csr_sweep(cfg: SynthConfig, arms: CsrArms,
                  m_values=(8, 16, 24, 32, 40, 48, 56, 64),
                  trials: int = 1000, noisy_input_snr_db: float = 5.0,
                  workers: int | None = None) -> ExperimentReport:
    """Measurement sweep: for each M, draw a fresh M-row selector, derive
    both arms' LR coding dictionaries by row selection, code fresh test
    signals (noise-free, and with noise at ``noisy_input_snr_db`` on the LR
    signals only), and record mean output SNR and RMSE per arm.

    Per-trial SNRs are capped at 300 dB so exact reconstructions keep the
    averages finite.
    """
    budget = cfg.total_sparsity
    gt_master = gen_ground_truth(cfg)          # test-signal generator
    d = gt_master.dset
    per_setting = []
    for idx, m in enumerate(m_values):
        if not 1 <= m <= cfg.n:
            raise ValueError(f"sweep M={m} out of range [1, {cfg.n}]")
        if budget > m + cfg.n:
            raise ValueError(f"budget {budget} exceeds stacked dim at M={m}")
        seeds = _trial_seeds(cfg.seed, 0x0C53 + idx, 3)
        rng = np.random.default_rng(seeds[0])
        rows = np.sort(rng.choice(cfg.n, size=m, replace=False))

        z = _random_supports(rng, cfg.k, trials, cfg.s_z)
        u = _random_supports(rng, cfg.k, trials, cfg.s_u)
        v = _random_supports(rng, cfg.k, trials, cfg.s_v)
        x_h = d.psi_c_h @ z + d.psi_h @ u
        y = d.phi_c @ z + d.phi @ v
        x_l = x_h[rows]

        jd = stack_joint_dictionary(arms.psi_c_x[rows], arms.psi_x[rows],
                                    arms.phi_c, arms.phi)
        base_dict = np.hstack([arms.base_psi_c_x[rows], arms.base_psi_x[rows]])
        base_budget = min(budget, m)

        def guided(xl):
            codes, _ = omp_batch(jd.stacked, np.vstack([xl, y]), budget,
                                 workers=workers)
            return arms.psi_c_h @ codes[:cfg.k] + arms.psi_h @ codes[cfg.k:2 * cfg.k]

        def unguided(xl):
            codes, _ = omp_batch(base_dict, xl, base_budget, workers=workers)
            return (arms.base_psi_c_h @ codes[:cfg.k]
                    + arms.base_psi_h @ codes[cfg.k:])

        x_l_noisy = add_awgn(x_l, noisy_input_snr_db, seeds[1])
        est_si = guided(x_l)
        est_base = unguided(x_l)
        est_si_noisy = guided(x_l_noisy)
        est_base_noisy = unguided(x_l_noisy)

        per_setting.append({
            "m": int(m),
            "metrics": {
                "si_snr_db": float(np.mean(_per_column_snr_db(x_h, est_si))),
                "si_rmse": rmse(x_h, est_si),
                "base_snr_db": float(np.mean(_per_column_snr_db(x_h, est_base))),
                "base_rmse": rmse(x_h, est_base),
                "si_snr_db_noisy": float(np.mean(_per_column_snr_db(x_h, est_si_noisy))),
                "si_rmse_noisy": rmse(x_h, est_si_noisy),
                "base_snr_db_noisy": float(np.mean(_per_column_snr_db(x_h, est_base_noisy))),
                "base_rmse_noisy": rmse(x_h, est_base_noisy),
            },
        })

    gaps = [e["metrics"]["si_snr_db"] - e["metrics"]["base_snr_db"]
            for e in per_setting]
    crossover = [e["m"] for e, g in zip(per_setting, gaps) if g > 0.0]
    aggregates = {
        "max_m_with_si_advantage": max(crossover) if crossover else None,
        "min_gap_db": min(gaps),
    }
    config = {
        "experiment": "csr_sweep",
        "synth": dataclasses.asdict(cfg),
        "m_values": [int(m) for m in m_values],
        "trials": trials,
        "noisy_input_snr_db": noisy_input_snr_db,
    }
    return ExperimentReport(config=config, per_setting=per_setting,
                            aggregates=aggregates)


def _paired_image_parts(width: int, height: int, seed: int):
    rng = np.random.default_rng(seed)
    n_regions = max(6, (width * height) // 1200)
    centers = np.stack([rng.uniform(0, height, n_regions),
                        rng.uniform(0, width, n_regions)], axis=1)
    rr, cc = np.mgrid[0:height, 0:width]
    d2 = ((rr[..., None] - centers[:, 0]) ** 2
          + (cc[..., None] - centers[:, 1]) ** 2)
    label = np.argmin(d2, axis=2)

    shade_a = rng.uniform(0.1, 0.9, n_regions)
    shade_b = rng.uniform(0.1, 0.9, n_regions)
    a = shade_a[label]
    b = shade_b[label]

    textured = rng.random(n_regions) < 0.5
    freq = rng.uniform(0.05, 0.12, (n_regions, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, n_regions)
    for r in range(n_regions):
        if not textured[r]:
            continue
        wave = 0.06 * np.sin(2.0 * np.pi * (freq[r, 0] * rr + freq[r, 1] * cc)
                             + phase[r])
        b = np.where(label == r, b + wave, b)
    return (Image(np.clip(a, 0.0, 1.0)), Image(np.clip(b, 0.0, 1.0)), label)


def gen_paired_images(width: int, height: int, seed: int) -> tuple[Image, Image]:
    """Two registered modalities of one synthetic scene: shared
    piecewise-constant region geometry, independent per-region intensities,
    and smooth texture present only in the second modality."""
    if width < 64 or height < 64:
        raise ValueError("paired images need dimensions >= 64")
    a, b, _ = _paired_image_parts(width, height, seed)
    return a, b


def write_csr_svg(report: ExperimentReport, path) -> None:
    """Render the sweep as a small standalone SVG line plot (output SNR vs
    measurement count, guided and no-guidance arms)."""
    pts = [(e["m"], e["metrics"]["si_snr_db"], e["metrics"]["base_snr_db"])
           for e in report.per_setting]
    if not pts:
        raise ValueError("report has no sweep points")
    w, h, pad = 480, 320, 45
    ms = [p[0] for p in pts]
    snrs = [v for p in pts for v in p[1:]]
    lo, hi = min(snrs), max(snrs)
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(m):
        return pad + (w - 2 * pad) * (m - ms[0]) / max(ms[-1] - ms[0], 1)

    def sy(v):
        return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo)

    def poly(vals, color):
        path_pts = " ".join(f"{sx(m):.1f},{sy(v):.1f}" for m, v in zip(ms, vals))
        return (f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                f'points="{path_pts}"/>')

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        poly([p[1] for p in pts], "red"),
        poly([p[2] for p in pts], "black"),
        f'<text x="{w // 2}" y="{h - 10}" font-size="12" text-anchor="middle">'
        'measurements M</text>',
        f'<text x="14" y="{h // 2}" font-size="12" transform="rotate(-90 14 {h // 2})" '
        'text-anchor="middle">output SNR (dB)</text>',
        f'<text x="{w - pad}" y="{pad - 8}" font-size="11" text-anchor="end" '
        'fill="red">with guidance</text>',
        f'<text x="{w - pad}" y="{pad + 6}" font-size="11" text-anchor="end" '
        'fill="black">without guidance</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
