"""Core backend: users, feeds, sharing, plugins, trees, structured analysis."""

import json
import random
import threading
import time

import pytest

from chips.core import (
    AuthRequired,
    CoreConfig,
    CoreServer,
    CoreService,
    DuplicatePlugin,
    DuplicateStudyFeed,
    InvalidLogin,
    NotAuthorized,
    ParamValidation,
    ParentNotReady,
    Predicate,
    SchemaInvalid,
    UnknownUser,
)
from chips.core.errors import CoreError
from chips.dicom.metadata import MetadataRecord
from chips.pacs.client import PullReceipt


@pytest.fixture()
def service(tmp_path):
    svc = CoreService(CoreConfig(store_path=tmp_path / "core"))
    yield svc
    svc.close()


def make_receipt(tmp_path, uid="9.9.1234", series=("s1", "s2"), sex="F") -> PullReceipt:
    study_dir = tmp_path / "data" / uid
    records = []
    for name in series:
        series_dir = study_dir / name
        series_dir.mkdir(parents=True, exist_ok=True)
        for i in range(3):
            (series_dir / f"{i:04d}.dcm").write_bytes(b"test-instance-bytes")
        records.append(MetadataRecord(uid, "DICOM", name, {"PatientSex": sex, "Modality": "MR"}))
    return PullReceipt(
        anon_study_uid=uid,
        study_dir=str(study_dir),
        instance_count=3 * len(series),
        series_instance_counts={name: 3 for name in series},
        metadata_records=records,
    )


IMGSTATS_DESCRIPTOR = {
    "name": "imgstats",
    "version": "1.0",
    "parameters": [
        {"name": "verbose", "type": "flag", "required": False, "default": False},
    ],
    "command": ["echo", "{param:verbose}"],
    "timeout_s": 60.0,
}


# -- users & tokens -------------------------------------------------------------


def test_login_and_token_verify(service):
    service.create_user("alice", "pw1", "CLINICIAN")
    token, user = service.login("alice", "pw1")
    assert user.login == "alice"
    assert service.verify_token(token).login == "alice"
    with pytest.raises(InvalidLogin):
        service.login("alice", "wrong")
    with pytest.raises(InvalidLogin):
        service.login("ghost", "pw1")
    with pytest.raises(AuthRequired):
        service.verify_token(token + "tampered")
    with pytest.raises(AuthRequired):
        service.verify_token("not-a-token")


def test_token_expiry(tmp_path):
    svc = CoreService(CoreConfig(store_path=tmp_path / "core", token_ttl_s=0.05))
    try:
        svc.create_user("alice", "pw", "CLINICIAN")
        token, _ = svc.login("alice", "pw")
        time.sleep(0.1)
        with pytest.raises(AuthRequired):
            svc.verify_token(token)
    finally:
        svc.close()


def test_duplicate_login_rejected(service):
    service.create_user("alice", "pw", "CLINICIAN")
    with pytest.raises(CoreError):
        service.create_user("alice", "other", "ADMIN")


# -- feeds ------------------------------------------------------------------------


def test_create_feed_from_pull(service, tmp_path):
    owner = service.create_user("alice", "pw", "CLINICIAN")
    receipt = make_receipt(tmp_path)
    feed = service.create_feed_from_pull(owner, "Brain study", receipt)
    assert feed.title == "Brain study"
    cards = service.list_feeds(owner)
    assert len(cards) == 1
    assert cards[0]["node_count"] == 0
    # metadata from the pull is queryable
    records = service.query_metadata([Predicate("PatientSex", "=", "F")])
    assert {r["provenance"] for r in records} == {"s1", "s2"}


def test_duplicate_study_feed(service, tmp_path):
    owner = service.create_user("alice", "pw", "CLINICIAN")
    receipt = make_receipt(tmp_path)
    service.create_feed_from_pull(owner, "first", receipt)
    with pytest.raises(DuplicateStudyFeed):
        service.create_feed_from_pull(owner, "second", receipt)
    # a different user may feed the same study
    other = service.create_user("bob", "pw", "RESEARCHER")
    feed = service.create_feed_from_pull(other, "bob's view", receipt)
    assert feed.owner_login == "bob"


def test_feed_from_missing_directory(service, tmp_path):
    owner = service.create_user("alice", "pw", "CLINICIAN")
    receipt = make_receipt(tmp_path)
    receipt.study_dir = str(tmp_path / "nowhere")
    with pytest.raises(CoreError):
        service.create_feed_from_pull(owner, "broken", receipt)


def test_share_feed_and_reshare(service, tmp_path):
    alice = service.create_user("alice", "pw", "CLINICIAN")
    bob = service.create_user("bob", "pw", "RESEARCHER")
    carol = service.create_user("carol", "pw", "RESEARCHER")
    stranger = service.create_user("mallory", "pw", "RESEARCHER")
    feed = service.create_feed_from_pull(alice, "study", make_receipt(tmp_path))

    assert service.list_feeds(bob) == []
    service.share_feed(alice, feed.id, "bob")
    assert [c["id"] for c in service.list_feeds(bob)] == [feed.id]
    # idempotent
    service.share_feed(alice, feed.id, "bob")
    assert len(service.list_feeds(bob)) == 1
    # access holders may re-share
    service.share_feed(bob, feed.id, "carol")
    assert [c["id"] for c in service.list_feeds(carol)] == [feed.id]
    with pytest.raises(NotAuthorized):
        service.share_feed(stranger, feed.id, "mallory")
    with pytest.raises(UnknownUser):
        service.share_feed(alice, feed.id, "nobody")


def test_access_control_matrix_property(service, tmp_path):
    rng = random.Random(2024)
    users = [service.create_user(f"user{i}", "pw", "CLINICIAN") for i in range(5)]
    expected_access = {}
    for f in range(6):
        owner = rng.choice(users)
        receipt = make_receipt(tmp_path, uid=f"9.9.{1000 + f}")
        feed = service.create_feed_from_pull(owner, f"feed{f}", receipt)
        shared = {u.id for u in rng.sample(users, rng.randint(0, len(users) - 1))}
        for user in users:
            if user.id in shared and user.id != owner.id:
                service.share_feed(owner, feed.id, user.login)
        expected_access[feed.id] = shared | {owner.id}
    for user in users:
        visible = {c["id"] for c in service.list_feeds(user)}
        expected = {fid for fid, members in expected_access.items() if user.id in members}
        assert visible == expected
        for fid in expected_access:
            if fid in expected:
                service.get_feed_tree(user, fid)
            else:
                with pytest.raises(NotAuthorized):
                    service.get_feed_tree(user, fid)


def test_annotate_tags_comments_bookmark(service, tmp_path):
    alice = service.create_user("alice", "pw", "CLINICIAN")
    bob = service.create_user("bob", "pw", "RESEARCHER")
    feed = service.create_feed_from_pull(alice, "study", make_receipt(tmp_path))
    service.share_feed(alice, feed.id, "bob")

    service.annotate_feed(alice, feed.id, "ADD_TAG", "fetal")
    service.annotate_feed(alice, feed.id, "ADD_TAG", "fetal")  # set semantics
    service.annotate_feed(bob, feed.id, "ADD_TAG", "mri")
    updated = service.store.get_feed(feed.id)
    assert updated.tags == {"fetal", "mri"}

    service.annotate_feed(alice, feed.id, "ADD_COMMENT", "looks clean")
    service.annotate_feed(bob, feed.id, "ADD_COMMENT", "agreed")
    updated = service.store.get_feed(feed.id)
    assert [c.text for c in updated.comments] == ["looks clean", "agreed"]
    stamps = [c.created for c in updated.comments]
    assert stamps == sorted(stamps)

    assert service.annotate_feed(alice, feed.id, "BOOKMARK").bookmarked_by == {alice.id}
    assert service.annotate_feed(alice, feed.id, "BOOKMARK").bookmarked_by == set()

    with pytest.raises(NotAuthorized):
        stranger = service.create_user("eve", "pw", "RESEARCHER")
        service.annotate_feed(stranger, feed.id, "ADD_TAG", "spy")


def test_concurrent_comments_both_present(service, tmp_path):
    alice = service.create_user("alice", "pw", "CLINICIAN")
    bob = service.create_user("bob", "pw", "RESEARCHER")
    feed = service.create_feed_from_pull(alice, "study", make_receipt(tmp_path))
    service.share_feed(alice, feed.id, "bob")

    def comment(user, text):
        service.annotate_feed(user, feed.id, "ADD_COMMENT", text)

    threads = [
        threading.Thread(target=comment, args=(alice, "from alice")),
        threading.Thread(target=comment, args=(bob, "from bob")),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    comments = service.store.get_feed(feed.id).comments
    assert len(comments) == 2
    assert {c.text for c in comments} == {"from alice", "from bob"}


# -- plugins -----------------------------------------------------------------------


def test_register_plugin_requires_admin(service):
    user = service.create_user("alice", "pw", "CLINICIAN")
    with pytest.raises(NotAuthorized):
        service.register_plugin(user, IMGSTATS_DESCRIPTOR)


def test_register_list_duplicate_and_schema(service):
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    assert descriptor.id > 0
    assert [p.name for p in service.list_plugins()] == ["imgstats"]
    with pytest.raises(DuplicatePlugin):
        service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    bad = dict(IMGSTATS_DESCRIPTOR, version="2.0",
               parameters=[{"name": "x", "type": "matrix"}])
    with pytest.raises(SchemaInvalid):
        service.register_plugin(admin, bad)
    unresolvable = dict(IMGSTATS_DESCRIPTOR, version="3.0",
                        parameters=[{"name": "x", "type": "int", "required": False}])
    with pytest.raises(SchemaInvalid):
        service.register_plugin(admin, unresolvable)


def test_param_validation(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, {
        "name": "demo", "version": "1",
        "parameters": [
            {"name": "n", "type": "int", "required": True},
            {"name": "mode", "type": "choice", "required": False, "default": "fast",
             "choices": ["fast", "slow"]},
        ],
        "command": ["echo", "{param:n}", "{param:mode}"],
    })
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    with pytest.raises(ParamValidation):
        service.create_plugin_instance(admin, feed.id, None, descriptor.id, {})
    with pytest.raises(ParamValidation):
        service.create_plugin_instance(admin, feed.id, None, descriptor.id, {"n": "NaNope"})
    with pytest.raises(ParamValidation):
        service.create_plugin_instance(admin, feed.id, None, descriptor.id,
                                       {"n": 1, "mode": "warp"})
    with pytest.raises(ParamValidation):
        service.create_plugin_instance(admin, feed.id, None, descriptor.id,
                                       {"n": 1, "bogus": 2})
    instance = service.create_plugin_instance(admin, feed.id, None, descriptor.id, {"n": 4})
    assert instance.status == "CREATED"
    assert instance.params == {"n": 4, "mode": "fast"}
    assert instance.input_dir == feed.root_dir


def test_parent_not_ready(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    # no dispatcher configured: the instance lands in ERROR, a non-SUCCESS parent
    parent = service.create_plugin_instance(admin, feed.id, None, descriptor.id, {})
    assert service.store.get_instance(parent.id).status == "ERROR"
    with pytest.raises(ParentNotReady):
        service.create_plugin_instance(admin, feed.id, parent.id, descriptor.id, {})


def test_feed_tree_structure_and_reconstruction_oracle(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    # build root -> A -> B and root -> C directly in the store
    a = service.store.create_instance(feed.id, descriptor.id, None, {}, feed.root_dir, "")
    service.store.update_instance(a.id, status="SUCCESS",
                                  output_dir=str(tmp_path / "a-out"))
    b = service.store.create_instance(feed.id, descriptor.id, a.id, {},
                                      str(tmp_path / "a-out"), str(tmp_path / "b-out"))
    c = service.store.create_instance(feed.id, descriptor.id, None, {}, feed.root_dir,
                                      str(tmp_path / "c-out"))
    tree = service.get_feed_tree(admin, feed.id)
    nodes = tree["nodes"]
    assert nodes[0]["node_id"] == "root"
    assert [n["node_id"] for n in nodes] == ["root", a.id, b.id, c.id]
    assert [n["depth"] for n in nodes] == [0, 1, 2, 1]
    # root listing shows the pulled study files
    assert len(nodes[0]["output_files"]) == 6
    # independent reconstruction from the parent-pointer table
    by_parent = {}
    for instance in service.store.instances_for_feed(feed.id):
        by_parent.setdefault(instance.parent_id, []).append(instance.id)

    def rebuild(parent, depth, acc):
        for node_id in sorted(by_parent.get(parent, [])):
            acc.append((node_id, depth))
            rebuild(node_id, depth + 1, acc)

    expected: list = []
    rebuild(None, 1, expected)
    assert [(n["node_id"], n["depth"]) for n in nodes[1:]] == expected
    # parent-before-child serialization
    seen = {"root"}
    for node in nodes[1:]:
        assert node["parent_id"] in seen
        seen.add(node["node_id"])
    # stable across calls absent mutation
    assert service.get_feed_tree(admin, feed.id) == tree


def test_workflow_tree_integrity_under_random_sequences(service, tmp_path):
    # random create/cancel sequences: the node set stays a single tree and
    # every instance's input dir equals its parent's output dir
    rng = random.Random(606)
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    ready: list = [None]  # None stands for the root data node
    created = []
    for step in range(40):
        action = rng.random()
        if action < 0.7 or not created:
            parent_id = rng.choice(ready)
            parent_out = feed.root_dir
            if parent_id is not None:
                parent_out = service.store.get_instance(parent_id).output_dir
            instance = service.store.create_instance(
                feed.id, descriptor.id, parent_id, {}, parent_out,
                str(tmp_path / f"out-{step}"),
            )
            created.append(instance.id)
            if rng.random() < 0.8:
                service.store.update_instance(instance.id, status="SUCCESS")
                ready.append(instance.id)
        else:
            service.cancel_instance(admin, rng.choice(created))
    instances = service.store.instances_for_feed(feed.id)
    by_id = {i.id: i for i in instances}
    for instance in instances:
        if instance.parent_id is None:
            assert instance.input_dir == feed.root_dir
        else:
            parent = by_id[instance.parent_id]
            assert parent.feed_id == feed.id
            assert instance.input_dir == parent.output_dir
        # walking parents always reaches the root without cycles
        seen, cursor = set(), instance
        while cursor.parent_id is not None:
            assert cursor.id not in seen
            seen.add(cursor.id)
            cursor = by_id[cursor.parent_id]
    tree_nodes = service.get_feed_tree(admin, feed.id)["nodes"]
    assert len(tree_nodes) == len(instances) + 1  # one tree, single root


def test_cancel_cascades_to_descendants(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    descriptor = service.register_plugin(admin, IMGSTATS_DESCRIPTOR)
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    a = service.store.create_instance(feed.id, descriptor.id, None, {}, feed.root_dir, "")
    b = service.store.create_instance(feed.id, descriptor.id, a.id, {}, "", "")
    c = service.store.create_instance(feed.id, descriptor.id, b.id, {}, "", "")
    service.store.update_instance(c.id, status="SUCCESS")  # terminal: must not change
    service.cancel_instance(admin, a.id)
    assert service.store.get_instance(a.id).status == "CANCELLED"
    assert service.store.get_instance(b.id).status == "CANCELLED"
    assert service.store.get_instance(c.id).status == "SUCCESS"


# -- structured analysis ----------------------------------------------------------------


def seed_success_instance(service, tmp_path, admin, feed, results_text=None):
    descriptor = service.register_plugin(admin, dict(IMGSTATS_DESCRIPTOR, version="9.9"))
    out_dir = tmp_path / "analysis-out"
    out_dir.mkdir(exist_ok=True)
    if results_text is not None:
        (out_dir / "results.tsv").write_text(results_text)
    instance = service.store.create_instance(feed.id, descriptor.id, None, {},
                                             feed.root_dir, str(out_dir))
    service.store.update_instance(instance.id, status="SUCCESS")
    return service.store.get_instance(instance.id)


def test_structured_analysis_parses_results(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    instance = seed_success_instance(
        service, tmp_path, admin, feed,
        "LeftHippocampus\t4100.5\nRightHippocampus\t4250.0\n",
    )
    records, warnings = service.structured_analysis(instance.id)
    assert warnings == 0
    assert len(records) == 1
    record = records[0]
    assert record.source == "ANALYSIS"
    assert record.provenance == str(instance.id)
    assert record.image_id == feed.study_uid
    assert record.entries == {"LeftHippocampus": 4100.5, "RightHippocampus": 4250.0}
    found = service.query_metadata([Predicate("LeftHippocampus", ">", 4000)])
    assert {r["image_id"] for r in found} == {feed.study_uid}


def test_structured_analysis_no_results_file(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    instance = seed_success_instance(service, tmp_path, admin, feed, results_text=None)
    records, warnings = service.structured_analysis(instance.id)
    assert records == [] and warnings == 0


def test_structured_analysis_counts_malformed_rows(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    instance = seed_success_instance(
        service, tmp_path, admin, feed,
        "Good\t1.0\nbad-row-without-tab\nAlso\t2.5\n",
    )
    records, warnings = service.structured_analysis(instance.id)
    assert warnings == 1
    assert records[0].entries == {"Good": 1.0, "Also": 2.5}


def test_structured_analysis_requires_success(service, tmp_path):
    admin = service.create_user("root", "pw", "ADMIN")
    feed = service.create_feed_from_pull(admin, "study", make_receipt(tmp_path))
    descriptor = service.register_plugin(admin, dict(IMGSTATS_DESCRIPTOR, version="x"))
    instance = service.store.create_instance(feed.id, descriptor.id, None, {}, feed.root_dir, "")
    with pytest.raises(CoreError):
        service.structured_analysis(instance.id)


# -- PACS activity through core ---------------------------------------------------------------


def test_pacs_pull_through_core_and_shared_study(tmp_path):
    from chips.pacs import PacsServer, build_corpus

    corpus_dir = tmp_path / "corpus"
    infos = build_corpus(corpus_dir)
    pacs = PacsServer(corpus_dir, {"clinic": "s3cret"})
    pacs.start()
    service = CoreService(CoreConfig(
        store_path=tmp_path / "core", pacs_url=pacs.url,
        pacs_account="clinic", pacs_secret="s3cret",
    ))
    try:
        alice = service.create_user("alice", "pw", "CLINICIAN")
        bob = service.create_user("bob", "pw", "RESEARCHER")
        from chips.pacs import QuerySpec

        rows = service.pacs_query(QuerySpec(filters={"Modality": "MR"}))
        assert len(rows) == 2
        study_uid = rows[0]["study_uid"]

        feed_a = service.pacs_pull(alice, study_uid, "alice's view")
        assert feed_a.owner_login == "alice"
        assert service.query_metadata([Predicate("PatientSex", "=", "F")])

        # second pull of the same study: study dir is reused, feed is bob's own
        feed_b = service.pacs_pull(bob, study_uid, "bob's view")
        assert feed_b.owner_login == "bob"
        assert feed_b.study_uid == feed_a.study_uid

        # same user again: refused at the feed level
        with pytest.raises(DuplicateStudyFeed):
            service.pacs_pull(alice, study_uid, "again")
    finally:
        service.close()
        pacs.stop()


# -- REST surface ----------------------------------------------------------------------------


def test_rest_login_feeds_metadata(tmp_path):
    import requests

    service = CoreService(CoreConfig(store_path=tmp_path / "core"))
    service.create_user("alice", "pw", "CLINICIAN")
    server = CoreServer(service)
    server.start()
    try:
        base = server.url
        r = requests.post(f"{base}/login", json={"login": "alice", "secret": "pw"})
        assert r.status_code == 200
        token = r.json()["token"]
        headers = {"Authorization": f"Bearer {token}"}

        assert requests.get(f"{base}/feeds").status_code == 401
        assert requests.get(f"{base}/feeds", headers=headers).json() == {"feeds": []}

        receipt = make_receipt(tmp_path)
        r = requests.post(f"{base}/feeds", headers=headers,
                          json={"title": "via rest", "receipt": receipt.to_json()})
        assert r.status_code == 201, r.text
        feed_id = r.json()["id"]

        r = requests.get(f"{base}/feeds/{feed_id}/tree", headers=headers)
        assert r.status_code == 200
        assert r.json()["nodes"][0]["node_id"] == "root"

        r = requests.post(f"{base}/feeds/{feed_id}/annotate", headers=headers,
                          json={"action": "ADD_TAG", "text": "fetal"})
        assert "fetal" in r.json()["tags"]

        q = json.dumps([{"key": "PatientSex", "op": "=", "value": "F"}])
        r = requests.get(f"{base}/metadata/query", headers=headers, params={"q": q})
        assert r.status_code == 200
        assert len(r.json()["records"]) == 2

        r = requests.get(f"{base}/metadata/query", headers=headers,
                         params={"q": json.dumps([{"key": "x", "op": "~", "value": 1}])})
        assert r.status_code == 400
        assert r.json()["error"] == "BadComparator"

        # wrong login
        r = requests.post(f"{base}/login", json={"login": "alice", "secret": "nope"})
        assert r.status_code == 401
    finally:
        server.stop()


def test_rest_serves_ui_bundle(tmp_path):
    import requests

    ui_dir = tmp_path / "dist"
    ui_dir.mkdir()
    (ui_dir / "index.html").write_text("<!doctype html><title>chips</title>")
    (ui_dir / "main.js").write_text("export {};")
    service = CoreService(CoreConfig(store_path=tmp_path / "core", ui_dir=ui_dir))
    server = CoreServer(service)
    server.start()
    try:
        r = requests.get(f"{server.url}/ui/")
        assert r.status_code == 200 and "chips" in r.text
        r = requests.get(f"{server.url}/ui/main.js")
        assert r.status_code == 200
        assert "javascript" in r.headers["Content-Type"]
        assert requests.get(f"{server.url}/ui/missing.js").status_code == 404
        assert requests.get(f"{server.url}/ui/..%2Fsecrets").status_code == 404
    finally:
        server.stop()
