"""Contention scenarios: a long non-critical task saturates the mesh, then an urgent one arrives."""
import random
from dataclasses import replace

from isosched.graph import TaskDag, WorkloadSet
from isosched.platform import PRESETS
from isosched.scheduler import SchedulerParams
from helpers import conv


def contention(seed: int = 0, victim_critical: bool = False):
    """(workload, trace events, platform, params) for one seeded scenario on a 2x2 mesh."""
    rng = random.Random(seed)
    H_bg = rng.choice([64, 80, 96])
    C = rng.choice([4, 8])
    victim = TaskDag(0, tuple(conv(i, H=H_bg, C=C, wb=rng.choice([2048, 4096])) for i in range(4)),
                     tuple((i, i + 1) for i in range(3)), deadline=4000, priority=1, critical=victim_critical,
                     name="background")
    n_urgent = rng.choice([2, 3])
    H_u = rng.choice([6, 8])
    urgent = TaskDag(1, tuple(conv(i, H=H_u, C=C) for i in range(n_urgent)),
                     tuple((i, i + 1) for i in range(n_urgent - 1)), deadline=rng.choice([36, 40, 48]),
                     priority=4, critical=True, name="urgent")
    arrive = rng.randint(10, 30)
    wl = WorkloadSet((victim, urgent))
    pf = replace(PRESETS["desk2"], reconfig_bw=4096)
    return wl, ((0, 0), (1, arrive)), pf, SchedulerParams(max_stages=4, seed=seed)
