"""Acceptance suite: one test per criterion, at the stated scale and
tolerance. The conftest hook prints a PASS/FAIL line per criterion."""

import json
import random
import string
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest
import requests

from chips.dicom import (
    default_policy,
    parse_dataset,
    parse_file,
    serialize_dataset,
)
from chips.dicom.anonymize import Action
from chips.core import CoreConfig, CoreServer, CoreService
from chips.dispatcher import ComputeNode, Dispatcher, StepPhase, StepPlan
from chips.dispatcher.api import DispatcherServer
from chips.dispatcher.nodes import HEALTH_UP, HEALTH_DOWN, NodeRegistry
from chips.dispatcher.steps import TERMINAL_PHASES
from chips.fileio import IntegrityMismatch, TreeManifest, fetch_manifest, pull_tree, push_tree
from chips.fileio.server import FileioServer
from chips.jobmgr import JobManager, JobSpec, JobState
from chips.jobmgr.api import JobmgrServer
from chips.jobmgr.client import JobmgrClient
from chips.jobmgr.manager import TERMINAL_STATES
from chips.pacs import PacsServer, build_corpus, pull_study
from chips.pacs.corpus import SeriesInfo, StudyInfo

from datagen import random_dataset

CREDS = {"clinic": "s3cret"}


# ---------------------------------------------------------------------------
# Criterion 1: end-to-end pipeline across all services on localhost
# ---------------------------------------------------------------------------


def test_criterion_e2e_pipeline(tmp_path):
    started = time.monotonic()

    corpus_dir = tmp_path / "corpus"
    build_corpus(corpus_dir)  # 3 studies x 2 series x 3 instances
    pacs = PacsServer(corpus_dir, CREDS)
    pacs.start()

    node_root = tmp_path / "node-root"  # one fileio shared by both jobmgr nodes
    fileio = FileioServer(node_root)
    fileio.start()
    managers = [JobManager(node_root, max_parallel=2, grace_period_s=0.5) for _ in range(2)]
    jobmgrs = [JobmgrServer(m) for m in managers]
    for server in jobmgrs:
        server.start()

    registry = NodeRegistry([
        ComputeNode(id=f"jm{i+1}", jobmgr_url=server.url, fileio_url=fileio.url, capacity=2)
        for i, server in enumerate(jobmgrs)
    ], probe_interval_s=0.5)
    registry.probe_all()
    registry.start_probing()
    dispatcher = Dispatcher(registry, tmp_path / "dispatch", backoff_s=(0.1, 0.2, 0.4),
                            poll_interval_s=0.05, remote_timeout_s=10.0)
    dispatcher_server = DispatcherServer(dispatcher)
    dispatcher_server.start()

    service = CoreService(CoreConfig(
        store_path=tmp_path / "core",
        dispatcher_url=dispatcher_server.url,
        pacs_url=pacs.url,
        pacs_account="clinic",
        pacs_secret="s3cret",
    ))
    service.create_user("drq", "pw-clinic", "CLINICIAN")
    service.create_user("root", "pw-admin", "ADMIN")
    core = CoreServer(service)
    core.start()
    base = core.url

    try:
        # login
        token = requests.post(f"{base}/login",
                              json={"login": "drq", "secret": "pw-clinic"}).json()["token"]
        headers = {"Authorization": f"Bearer {token}"}
        admin_token = requests.post(f"{base}/login",
                                    json={"login": "root", "secret": "pw-admin"}).json()["token"]
        admin_headers = {"Authorization": f"Bearer {admin_token}"}

        # query Modality=MR: 2 of the 3 studies
        r = requests.post(f"{base}/pacs/query", headers=headers,
                          json={"level": "STUDY", "filters": {"Modality": "MR"}})
        assert r.status_code == 200, r.text
        studies = r.json()["studies"]
        assert len(studies) == 2
        assert all(s["patient_sex"] == "F" for s in studies)
        study_uid = studies[0]["study_uid"]

        # pull one study into a new feed
        r = requests.post(f"{base}/pacs/pull", headers=headers,
                          json={"study_uid": study_uid, "title": "E2E study"})
        assert r.status_code == 201, r.text
        feed_id = r.json()["id"]
        assert [c["id"] for c in requests.get(f"{base}/feeds", headers=headers).json()["feeds"]] == [feed_id]

        # register the demo plugin (admin) and launch it on the root data node
        descriptor = {
            "name": "imgstats",
            "version": "1.0",
            "parameters": [],
            "command": [sys.executable, "-m", "chips.plugins.imgstats",
                        "--inputdir", "{input}", "--outputdir", "{output}"],
            "timeout_s": 120.0,
        }
        r = requests.post(f"{base}/plugins", headers=admin_headers, json=descriptor)
        assert r.status_code == 201, r.text
        plugin_id = r.json()["id"]
        assert requests.get(f"{base}/plugins", headers=headers).json()["plugins"]

        r = requests.post(f"{base}/feeds/{feed_id}/instances", headers=headers,
                          json={"plugin_id": plugin_id, "parent_id": "root", "params": {}})
        assert r.status_code == 201, r.text
        assert r.json()["status"] == "CREATED"

        # poll the tree until the instance is terminal
        deadline = time.monotonic() + 50
        nodes = []
        while time.monotonic() < deadline:
            nodes = requests.get(f"{base}/feeds/{feed_id}/tree", headers=headers).json()["nodes"]
            if all(n["status"] in ("SUCCESS", "ERROR", "CANCELLED") for n in nodes):
                break
            time.sleep(0.2)

        assert len(nodes) == 2  # root data node + one plugin instance
        assert nodes[0]["node_id"] == "root"
        assert len(nodes[0]["output_files"]) == 6
        instance_node = nodes[1]
        assert instance_node["status"] == "SUCCESS", instance_node
        assert "results.tsv" in instance_node["output_files"]

        # metadata queries: demographics from DICOM + plugin results, joined
        q = json.dumps([{"key": "PatientSex", "op": "=", "value": "F"}])
        records = requests.get(f"{base}/metadata/query", headers=headers,
                               params={"q": q}).json()["records"]
        assert len(records) == 3  # two series records + one analysis record
        assert {r["source"] for r in records} == {"DICOM", "ANALYSIS"}

        q = json.dumps([{"key": "file_count", "op": "=", "value": 6}])
        records = requests.get(f"{base}/metadata/query", headers=headers,
                               params={"q": q}).json()["records"]
        analysis = [r for r in records if r["source"] == "ANALYSIS"]
        assert len(analysis) == 1
        assert analysis[0]["entries"]["file_count"] == 6.0

        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"end-to-end run took {elapsed:.1f}s"
    finally:
        core.stop()
        dispatcher_server.stop()
        for server in jobmgrs:
            server.stop()
        fileio.stop()
        pacs.stop()


# ---------------------------------------------------------------------------
# Criterion 2: anonymization completeness over 200 randomized datasets
# ---------------------------------------------------------------------------


def _random_phi_value(rng) -> str:
    return "".join(rng.choice(string.ascii_uppercase + string.digits) for _ in range(16))


def test_criterion_anonymization_completeness(tmp_path):
    rng = random.Random(160920)
    policy = default_policy(b"acceptance-salt")
    remove_tags = [t for t, r in policy.rules.items() if r.action is Action.REMOVE]

    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    studies, phi_values, demographics = [], set(), {}
    n_studies, per_series = 10, 20  # 200 instances total
    for s in range(n_studies):
        study_uid = f"1.2.840.77.{s}"
        series_uid = f"{study_uid}.1"
        sex = rng.choice(["F", "M", "O"])
        age = f"{rng.randint(0, 99):03d}Y"
        demographics[study_uid] = (sex, age)
        phi_values.update((study_uid, series_uid))
        series = SeriesInfo(series_uid=series_uid, modality="MR")
        for i in range(per_series):
            ds = random_dataset(rng, max_elements=6)
            for tag in remove_tags:
                value = _random_phi_value(rng)
                phi_values.add(value)
                ds.set(tag, value, vr="LO")
            patient_id = _random_phi_value(rng)
            phi_values.add(patient_id)
            sop_uid = f"{series_uid}.{i}"
            phi_values.add(sop_uid)
            ds.set("PatientID", patient_id)
            ds.set("PatientSex", sex)
            ds.set("PatientAge", age)
            ds.set("StudyInstanceUID", study_uid)
            ds.set("SeriesInstanceUID", series_uid)
            ds.set("SOPInstanceUID", sop_uid)
            rel = f"s{s}/series0/i{i}.dcm"
            path = corpus_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(serialize_dataset(ds))
            series.files.append(rel)
        studies.append(StudyInfo(
            study_uid=study_uid, patient_id="unused", patient_name="unused",
            patient_sex=sex, patient_age=age, patient_birth_date="19000101",
            study_date="20240101", description=f"STUDY {s}", accession="unused",
            institution="unused", physician="unused", series=[series],
        ))
    with open(corpus_dir / "manifest.jsonl", "w") as fh:
        for study in studies:
            fh.write(json.dumps(study.to_json()) + "\n")

    pacs = PacsServer(corpus_dir, CREDS)
    pacs.start()
    dest = tmp_path / "pulled"
    try:
        for study in studies:
            receipt = pull_study(pacs.url, "clinic", "s3cret", study.study_uid, policy, dest)
            assert receipt.instance_count == per_series
    finally:
        pacs.stop()

    # disk scan: zero occurrences of any original PHI byte string
    violations = []
    checked_files = 0
    for path in dest.rglob("*.dcm"):
        blob = path.read_bytes()
        checked_files += 1
        for value in phi_values:
            if value.encode() in blob:
                violations.append((str(path), value))
    assert checked_files == n_studies * per_series
    assert violations == [], f"PHI leaked: {violations[:5]}"

    # PatientSex / PatientAge preserved exactly
    for study in studies:
        sex, age = demographics[study.study_uid]
        anon_uid = None
        for study_dir in dest.iterdir():
            sample = next(study_dir.rglob("*.dcm"))
            ds = parse_file(sample)
            if ds.text("PatientAge") == age and ds.text("PatientSex") == sex:
                anon_uid = study_dir.name
        assert anon_uid is not None, f"study with demographics {(sex, age)} not found"


# ---------------------------------------------------------------------------
# Criterion 3: DICOM round-trip identities over a 500-case property corpus
# ---------------------------------------------------------------------------


def test_criterion_dicom_round_trip():
    rng = random.Random(424242)
    failures = 0
    for case in range(500):
        ds = random_dataset(rng)
        data = serialize_dataset(ds)
        parsed = parse_dataset(data)
        if parsed != ds or serialize_dataset(parsed) != data:
            failures += 1
    assert failures == 0


# ---------------------------------------------------------------------------
# Criterion 4: fileio integrity: 200 round trips, 50 mutations all rejected
# ---------------------------------------------------------------------------


def _random_tree(rng, root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for _ in range(rng.randint(0, 7)):
        depth = rng.randint(0, 5)
        parts = [f"d{rng.randint(0, 3)}" for _ in range(depth)] + [f"f{rng.randint(0, 9999)}"]
        roll = rng.random()
        if roll < 0.85:
            size = rng.randint(0, 4096)
        elif roll < 0.97:
            size = rng.randint(4096, 262144)
        else:
            size = rng.randint(262144, 1048576)
        path = root.joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(rng.randbytes(size))


def test_criterion_fileio_integrity(tmp_path):
    rng = random.Random(55_177)
    server = FileioServer(tmp_path / "jobroot")
    server.start()
    try:
        for case in range(200):
            src = tmp_path / f"t{case}"
            _random_tree(rng, src)
            key = f"tree-{case}"
            pushed = push_tree(src, server.url, key)
            pulled = pull_tree(server.url, key, "input", tmp_path / f"back{case}")
            assert pulled.manifest.tree_hash == pushed.manifest.tree_hash
            assert TreeManifest.for_dir(tmp_path / f"back{case}").tree_hash == \
                pushed.manifest.tree_hash

        src = tmp_path / "mutation-source"
        _random_tree(rng, src)
        (src / "guaranteed.bin").write_bytes(rng.randbytes(8192))
        rejected = 0
        for case in range(50):
            key = f"mut-{case}"

            def flip(archive: bytes) -> bytes:
                mutated = bytearray(archive)
                offset = rng.randrange(len(mutated))
                mutated[offset] ^= 1 << rng.randrange(8)
                return bytes(mutated)

            try:
                push_tree(src, server.url, key, mutate=flip)
            except IntegrityMismatch:
                rejected += 1
                # no partial state: the key must still be free
                push_tree(src, server.url, key)
        assert rejected == 50
    finally:
        server.stop()


# ---------------------------------------------------------------------------
# Criterion 5: jobmgr randomized schedule, 500 jobs
# ---------------------------------------------------------------------------


def test_criterion_jobmgr_state_machine(tmp_path):
    rng = random.Random(90210)
    max_parallel = 4
    manager = JobManager(tmp_path, max_parallel=max_parallel, queue_limit=2000,
                         grace_period_s=0.3)
    stop_sampling = threading.Event()
    max_started = [0]

    def sampler():
        while not stop_sampling.is_set():
            records = manager.list_jobs({JobState.STARTED})
            max_started[0] = max(max_started[0], len(records))
            time.sleep(0.004)

    sampler_thread = threading.Thread(target=sampler, daemon=True)
    sampler_thread.start()

    expected_echo = subprocess.run(["echo", "ping"], capture_output=True).stdout
    kinds = {}
    try:
        for i in range(500):
            key = f"job{i:03d}"
            kind = rng.choices(["ok", "fail", "timeout", "cancel"],
                               weights=[60, 15, 10, 15])[0]
            kinds[key] = kind
            (tmp_path / key / "input").mkdir(parents=True)
            if kind == "ok":
                spec = JobSpec(job_key=key, command=["echo", "ping"], timeout_s=30)
            elif kind == "fail":
                spec = JobSpec(job_key=key, command=["sh", "-c", "exit 2"], timeout_s=30)
            elif kind == "timeout":
                spec = JobSpec(job_key=key, command=["sleep", "30"], timeout_s=0.15)
            else:
                spec = JobSpec(job_key=key, command=["sleep", "30"], timeout_s=30)
            manager.submit_job(spec)

        cancel_keys = [k for k, kind in kinds.items() if kind == "cancel"]
        rng.shuffle(cancel_keys)

        def cancel_worker(keys):
            for key in keys:
                time.sleep(rng.uniform(0, 0.01))
                manager.cancel_job(key)

        half = len(cancel_keys) // 2
        cancelers = [
            threading.Thread(target=cancel_worker, args=(cancel_keys[:half],)),
            threading.Thread(target=cancel_worker, args=(cancel_keys[half:],)),
        ]
        for t in cancelers:
            t.start()
        for t in cancelers:
            t.join()

        deadline = time.monotonic() + 240
        while time.monotonic() < deadline:
            records = manager.list_jobs()
            if all(r.state in TERMINAL_STATES for r in records):
                break
            time.sleep(0.05)

        order = ["SCHEDULED", "STARTED", "FINISHED_OK", "FINISHED_ERR", "CANCELLED", "TIMED_OUT"]
        records = manager.list_jobs()
        assert len(records) == 500
        for record in records:
            key = record.spec.job_key
            kind = kinds[key]
            names = [s for s, _t in record.transitions]
            indices = [order.index(n) for n in names]
            assert indices == sorted(indices), (key, names)
            assert len(set(names)) == len(names)
            assert record.state in TERMINAL_STATES
            if kind == "ok":
                assert record.state is JobState.FINISHED_OK
                assert record.stdout == expected_echo  # byte-exact capture
            elif kind == "fail":
                assert record.state is JobState.FINISHED_ERR
                assert record.exit_code == 2
            elif kind == "timeout":
                assert record.state is JobState.TIMED_OUT
                assert record.exit_code is None
            else:
                assert record.state is JobState.CANCELLED
                assert record.exit_code is None
        assert 0 < max_started[0] <= max_parallel, max_started[0]
    finally:
        stop_sampling.set()
        sampler_thread.join(timeout=2)
        manager.shutdown()


# ---------------------------------------------------------------------------
# Criterion 6: select_node oracle equivalence over 1,000 random node sets
# ---------------------------------------------------------------------------


def test_criterion_select_node_oracle():
    from chips.dispatcher import NoEligibleNode, select_node

    rng = random.Random(777_000)
    label_pool = ["gpu", "cpu", "bigmem", "fast-net"]

    def brute_force(labels, nodes):
        best = None
        for n in nodes:
            if n.health != HEALTH_UP or not labels.issubset(n.labels):
                continue
            ratio = n.queue_length / n.capacity
            if best is None or ratio < best[0] or (ratio == best[0] and n.id < best[1]):
                best = (ratio, n.id)
        return best[1] if best else None

    for case in range(1000):
        nodes = [
            ComputeNode(
                id=f"n{rng.randint(0, 999)}-{i}",
                jobmgr_url="http://x", fileio_url="http://y",
                capacity=rng.randint(1, 16),
                queue_length=rng.randint(0, 40),
                health=rng.choice([HEALTH_UP, HEALTH_UP, HEALTH_UP, HEALTH_DOWN, "UNKNOWN"]),
                labels=set(rng.sample(label_pool, rng.randint(0, 4))),
            )
            for i in range(rng.randint(1, 10))
        ]
        required = set(rng.sample(label_pool, rng.randint(0, 2)))
        expected = brute_force(required, nodes)
        if expected is None:
            with pytest.raises(NoEligibleNode):
                select_node(required, nodes)
            continue
        assert select_node(required, nodes).id == expected
        assert select_node(required, list(reversed(nodes))).id == expected  # determinism
        k = rng.choice([2, 3, 7])
        scaled = [
            ComputeNode(id=n.id, jobmgr_url=n.jobmgr_url, fileio_url=n.fileio_url,
                        capacity=n.capacity * k, queue_length=n.queue_length * k,
                        health=n.health, labels=n.labels)
            for n in nodes
        ]
        assert select_node(required, scaled).id == expected  # ratio-scaling invariance


# ---------------------------------------------------------------------------
# Criterion 7: query_metadata oracle equivalence, 300 predicates x 1,000 records
# ---------------------------------------------------------------------------


def test_criterion_query_metadata_oracle():
    from chips.core import MetadataIndex, Predicate
    from test_metadata_query import oracle_query, random_predicates, random_records

    rng = random.Random(31_415)
    records = random_records(rng, 1000)
    index = MetadataIndex(":memory:")
    ids = index.add_records(records)
    rows = list(zip(ids, records))
    assert index.count() == 1000
    for case in range(300):
        clauses = random_predicates(rng)
        result = index.query([Predicate(k, o, v) for k, o, v in clauses])
        expected = oracle_query(rows, clauses)
        assert [rid for rid, _r in result] == [rid for rid, _r in expected], clauses
    index.close()


# ---------------------------------------------------------------------------
# Criterion 8: fault tolerance: killed jobmgr, cut stream, dispatcher restart
# ---------------------------------------------------------------------------


def _mini_node(tmp_path, name, **fileio_kwargs):
    root = tmp_path / f"node-{name}"
    manager = JobManager(root, max_parallel=2, grace_period_s=0.3)
    jobmgr = JobmgrServer(manager)
    jobmgr.start()
    fileio = FileioServer(root, **fileio_kwargs)
    fileio.start()
    return root, manager, jobmgr, fileio


def _wait_terminal(dispatcher, step_id, timeout=60):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        plan = dispatcher.poll_step(step_id)
        if plan.phase in TERMINAL_PHASES:
            return plan
        time.sleep(0.02)
    raise AssertionError(f"step {step_id} never terminated: {dispatcher.poll_step(step_id).phase}")


def _input_dir(tmp_path, name):
    d = tmp_path / name
    d.mkdir(exist_ok=True)
    (d / "a.txt").write_bytes(b"payload\n")
    return d


def test_criterion_fault_tolerance(tmp_path):
    # (a) jobmgr killed mid-job
    root, manager, jobmgr, fileio = _mini_node(tmp_path, "killable")
    registry = NodeRegistry([ComputeNode(id="killable", jobmgr_url=jobmgr.url,
                                         fileio_url=fileio.url, capacity=2)])
    registry.probe_all()
    dispatcher = Dispatcher(registry, tmp_path / "d1", backoff_s=(0.05, 0.1),
                            poll_interval_s=0.05, remote_timeout_s=1.0)
    plan = StepPlan(step_id="faulted-job", instance_id=1,
                    input_dir=str(_input_dir(tmp_path, "in-a")),
                    output_dir=str(tmp_path / "out-a"),
                    command=["sh", "-c", "sleep 60 # chips-fault-marker"])
    dispatcher.execute_step(plan)
    deadline = time.monotonic() + 20
    while dispatcher.poll_step("faulted-job").phase is not StepPhase.POLLING:
        assert time.monotonic() < deadline
        time.sleep(0.02)
    jobmgr.stop(kill_running=True)  # the node dies mid-job
    fileio.stop()
    final = _wait_terminal(dispatcher, "faulted-job")
    assert final.phase is StepPhase.DONE_ERR
    assert not (tmp_path / "out-a").exists()  # no partial output tree
    probe = subprocess.run(["pgrep", "-f", "chips-fault-marker"], capture_output=True)
    assert probe.stdout.strip() == b""  # no orphan process

    # (b) fileio stream cut during output pull
    root2, manager2, jobmgr2, fileio2 = _mini_node(tmp_path, "cutter",
                                                   fault_cut_after_bytes=64)
    registry2 = NodeRegistry([ComputeNode(id="cutter", jobmgr_url=jobmgr2.url,
                                          fileio_url=fileio2.url, capacity=2)])
    registry2.probe_all()
    dispatcher2 = Dispatcher(registry2, tmp_path / "d2", backoff_s=(0.05, 0.1),
                             poll_interval_s=0.05, remote_timeout_s=5.0)
    # the push path (POST) is unaffected by the cut hook; only pulls are cut
    plan2 = StepPlan(step_id="cut-pull", instance_id=2,
                     input_dir=str(_input_dir(tmp_path, "in-b")),
                     output_dir=str(tmp_path / "out-b"),
                     command=["sh", "-c", "cp input/a.txt output/ && head -c 4096 /dev/zero > output/big.bin"])
    dispatcher2.execute_step(plan2)
    final2 = _wait_terminal(dispatcher2, "cut-pull")
    assert final2.phase is StepPhase.DONE_ERR
    assert final2.diagnostic.startswith("PULL_FAILED")
    assert not (tmp_path / "out-b").exists()  # atomic restore: nothing partial
    record = JobmgrClient(jobmgr2.url).get("cut-pull")
    assert record.state in TERMINAL_STATES  # no orphan remote job
    jobmgr2.stop()
    fileio2.stop()

    # (c) dispatcher restart: a step persisted mid-POLLING is re-driven
    root3, manager3, jobmgr3, fileio3 = _mini_node(tmp_path, "steady")
    registry3 = NodeRegistry([ComputeNode(id="steady", jobmgr_url=jobmgr3.url,
                                          fileio_url=fileio3.url, capacity=2)])
    registry3.probe_all()
    input_dir = _input_dir(tmp_path, "in-c")
    push_tree(input_dir, fileio3.url, "restarted-step")
    JobmgrClient(jobmgr3.url).submit(JobSpec(
        job_key="restarted-step", command=["sh", "-c", "cp input/a.txt output/"]))
    crashed = Dispatcher(registry3, tmp_path / "d3")
    crashed._save(StepPlan(
        step_id="restarted-step", instance_id=3, input_dir=str(input_dir),
        output_dir=str(tmp_path / "out-c"), command=["sh", "-c", "cp input/a.txt output/"],
        phase=StepPhase.POLLING, node_id="steady",
    ))
    recovered = Dispatcher(registry3, tmp_path / "d3", backoff_s=(0.05, 0.1),
                           poll_interval_s=0.05, remote_timeout_s=5.0)
    assert recovered.recover() == 1
    final3 = _wait_terminal(recovered, "restarted-step")
    assert final3.phase is StepPhase.DONE_OK
    # conservation: pulled output equals the remote output manifest
    local = TreeManifest.for_dir(tmp_path / "out-c")
    remote = fetch_manifest(fileio3.url, "restarted-step", "output")
    assert local.tree_hash == remote.tree_hash
    jobmgr3.stop()
    fileio3.stop()
