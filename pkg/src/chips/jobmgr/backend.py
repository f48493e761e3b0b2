"""Execution backends: how a job spec becomes an argv + environment.

The local backend runs the command directly in the per-job working directory
with a scrubbed environment. The container backend wraps the command in a
container-runtime invocation using the spec's sandbox image; it shares the
same contract, so the manager drives both identically.
"""

from __future__ import annotations

from pathlib import Path

SCRUBBED_PATH = "/usr/local/bin:/usr/bin:/bin"


class ExecutionBackend:
    name = "abstract"

    def build_command(self, spec, job_dir: Path) -> tuple[list[str], dict[str, str], Path]:
        """Return (argv, environment, cwd) for the spawned process."""
        raise NotImplementedError


class LocalBackend(ExecutionBackend):
    name = "local"

    def build_command(self, spec, job_dir: Path) -> tuple[list[str], dict[str, str], Path]:
        env = {
            "PATH": SCRUBBED_PATH,
            "HOME": str(job_dir),
            "LANG": "C.UTF-8",
            "JOB_INPUT": spec.input_subdir,
            "JOB_OUTPUT": spec.output_subdir,
        }
        env.update(spec.environment)
        return list(spec.command), env, job_dir


class ContainerBackend(ExecutionBackend):
    """Wraps the command in `<runtime> run` with the job dir volume-mapped.

    Requires spec.image; the job directory appears as /job inside the
    container, matching the relative input/output layout of the local
    backend.
    """

    name = "container"

    def __init__(self, runtime: str = "docker"):
        self.runtime = runtime

    def build_command(self, spec, job_dir: Path) -> tuple[list[str], dict[str, str], Path]:
        if not spec.image:
            raise ValueError(f"job {spec.job_key!r} has no sandbox image for the container backend")
        argv = [self.runtime, "run", "--rm", "--network", "none",
                "-v", f"{job_dir}:/job", "-w", "/job"]
        for key, value in spec.environment.items():
            argv += ["-e", f"{key}={value}"]
        argv += ["-e", f"JOB_INPUT={spec.input_subdir}", "-e", f"JOB_OUTPUT={spec.output_subdir}"]
        argv.append(spec.image)
        argv += list(spec.command)
        env = {"PATH": SCRUBBED_PATH, "HOME": str(job_dir), "LANG": "C.UTF-8"}
        return argv, env, job_dir


def backend_by_name(name: str) -> ExecutionBackend:
    if name == "local":
        return LocalBackend()
    if name == "container":
        return ContainerBackend()
    raise ValueError(f"unknown backend {name!r}")
