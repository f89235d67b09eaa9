"""Deriving resource targets from job execution profiles.

Walks through the four target formulas on a single job, then shows how
scout-job measurements aggregate into one per-task estimate via the
percentile rules (75th for RAM, 95th for CPU time, median for I/O).
"""

import numpy as np

from respred import JobProfile, ResourceConfig, aggregate_scouts
from respred.targets import derive_cpu_time, derive_io_intensity, derive_ram_count, derive_walltime

cfg = ResourceConfig(
    margin=1.0,            # no safety inflation, to keep the numbers legible
    min_ram_count=500.0,   # MB floor
    walltime_C=1.0,
    walltime_P=10.0,       # HS06 per core
)

job = JobProfile(
    task_id="demo-task",
    max_pss=8000.0,        # MB
    start_time=0.0,
    end_time=3600.0,       # one hour
    core_power=10.0,       # HS06
    n_events_job=1000,
    input_bytes=1e9,
    output_bytes=1e9,
    core_count=8,
    is_scout=True,
)

print("one job:")
print(f"  ram_count    = {derive_ram_count(job, cfg):10.1f} MB/core")
cpu = derive_cpu_time(job, cfg)
print(f"  cpu_time     = {cpu:10.3f} HS06-s/event")
print(f"  io_intensity = {derive_io_intensity(job):10.1f} bytes/s")
print(f"  walltime     = {derive_walltime(cpu, job.n_events_job, cfg):10.1f} s")

# a handful of scouts with spread: the percentiles add headroom on purpose
rng = np.random.default_rng(0)
scouts = []
for i in range(8):
    jitter = float(np.exp(0.15 * rng.standard_normal()))
    scouts.append(JobProfile(
        task_id="demo-task",
        max_pss=8000.0 * jitter,
        start_time=0.0,
        end_time=3600.0 * jitter,
        core_power=10.0,
        n_events_job=1000,
        input_bytes=1e9,
        output_bytes=1e9,
        core_count=8,
        is_scout=True,
    ))

agg = aggregate_scouts(scouts, cfg)
t = agg.targets
print(f"\naggregated over {agg.n_scouts} scouts "
      f"(cpu filter kept {agg.n_cpu_scouts}, fallback={agg.cpu_fallback_all}):")
print(f"  ram_count    = {t.ram_count:10.1f} MB/core   (75th percentile)")
print(f"  cpu_time     = {t.cpu_time:10.3f} HS06-s/evt (95th percentile)")
print(f"  io_intensity = {t.io_intensity:10.1f} bytes/s  (median)")
print(f"  walltime     = {t.walltime:10.1f} s")
