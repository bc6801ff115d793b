import json

import pytest

from agentloom.backends import Usage
from agentloom.db import ConflictError, DBManager, NotFoundError, ValidationFailed
from agentloom.messages import Message
from agentloom.schema import export_workflow, parse_workflow

from .conftest import two_agent_spec


@pytest.fixture
def db(tmp_path):
    return DBManager(tmp_path / "test.db")


def model_payload(name="mock model"):
    return {"name": name, "provider": "mock", "model_name": "scripted"}


def skill_payload(name="echo_skill"):
    return {"name": name, "description": "prints", "language": "shell", "source": "echo hi"}


def make_message(session_id, i):
    return Message(id=f"msg-{i}", session_ref=session_id, sender="a", recipient="b",
                   role="assistant", content=f"c{i}", turn_index=i,
                   created_at=f"2024-01-01T00:00:{i:02d}+00:00", usage=Usage(1, 1, False))


def seeded_workflow(db):
    """model + 2 agents + workflow, wired by real ids; returns the workflow entity."""
    model = db.create("model", model_payload())
    proxy = db.create("agent", {"name": "user_proxy", "type": "user_proxy"})
    assistant = db.create("agent", {"name": "assistant", "type": "assistant",
                                    "model_ref": model.id})
    return db.create("workflow", {
        "name": "flow", "pattern": "autonomous_chat",
        "initiator_ref": proxy.id, "receiver_ref": assistant.id,
    })


class TestCrud:
    def test_create_get_round_trip(self, db):
        created = db.create("model", model_payload())
        got = db.get("model", created.id)
        assert got.payload == created.payload
        assert got.payload["name"] == "mock model"
        assert got.created_at == got.updated_at

    def test_created_id_is_server_assigned(self, db):
        created = db.create("model", {**model_payload(), "id": "my-id"})
        assert created.id != "my-id"
        assert created.payload["id"] == created.id

    def test_delete_then_get_not_found(self, db):
        created = db.create("model", model_payload())
        db.delete("model", created.id)
        with pytest.raises(NotFoundError):
            db.get("model", created.id)

    def test_get_unknown_not_found(self, db):
        with pytest.raises(NotFoundError):
            db.get("agent", "missing")

    def test_update_bumps_updated_at_and_payload(self, db):
        created = db.create("model", model_payload())
        updated = db.update("model", created.id, model_payload(name="renamed"))
        assert updated.payload["name"] == "renamed"
        assert updated.updated_at >= created.created_at
        assert db.get("model", created.id).payload["name"] == "renamed"

    def test_update_unknown_not_found(self, db):
        with pytest.raises(NotFoundError):
            db.update("model", "missing", model_payload())

    def test_list_ordered_by_created_at_desc(self, db):
        ids = [db.create("skill", skill_payload(f"skill_{i}")).id for i in range(3)]
        listed = [e.id for e in db.list("skill")]
        assert listed == list(reversed(ids))

    def test_list_name_filter(self, db):
        db.create("skill", skill_payload("alpha_skill"))
        db.create("skill", skill_payload("beta_skill"))
        assert [e.payload["name"] for e in db.list("skill", name_contains="beta")] == ["beta_skill"]

    def test_validation_failure_on_create(self, db):
        with pytest.raises(ValidationFailed):
            db.create("model", {"name": "x", "provider": "bogus", "model_name": "y"})

    def test_agent_with_dangling_model_ref_rejected(self, db):
        with pytest.raises(ValidationFailed) as exc:
            db.create("agent", {"name": "a", "type": "assistant", "model_ref": "nope"})
        assert "nope" in str(exc.value)

    def test_delete_conflict_lists_referrers(self, db):
        model = db.create("model", model_payload())
        agent = db.create("agent", {"name": "a", "type": "assistant", "model_ref": model.id})
        with pytest.raises(ConflictError) as exc:
            db.delete("model", model.id)
        assert ("agent", agent.id) in exc.value.referrers
        # still present
        db.get("model", model.id)

    def test_force_cascade_delete(self, db):
        wf = seeded_workflow(db)
        model = db.list("model")[0]
        db.delete("model", model.id, force=True)
        with pytest.raises(NotFoundError):
            db.get("model", model.id)
        # the referencing agent and the workflow referencing it are gone too
        with pytest.raises(NotFoundError):
            db.get("workflow", wf.id)
        assert db.audit() == []

    def test_durability_across_reopen(self, db, tmp_path):
        created = db.create("model", model_payload())
        again = DBManager(tmp_path / "test.db")
        assert again.get("model", created.id).payload == created.payload

    def test_tags_stored(self, db):
        created = db.create("skill", skill_payload(), tags=("default", "demo"))
        assert db.get("skill", created.id).tags == ("default", "demo")


class TestSessions:
    def test_session_requires_workflow(self, db):
        with pytest.raises(ValidationFailed):
            db.create("session", {"workflow_ref": "missing", "name": "s"})

    def test_append_and_load_order(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id, "name": "s"})
        m1, m2 = make_message(session.id, 0), make_message(session.id, 1)
        db.append_message(session.id, m1)
        db.append_message(session.id, m2)
        assert db.load_history(session.id) == [m1, m2]

    def test_fresh_session_empty_history(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        assert db.load_history(session.id) == []

    def test_hundred_appends_monotone(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        for i in range(100):
            db.append_message(session.id, make_message(session.id, i))
        history = db.load_history(session.id)
        assert len(history) == 100
        indexes = [m.turn_index for m in history]
        assert all(a < b for a, b in zip(indexes, indexes[1:]))

    def test_append_to_unknown_session(self, db):
        with pytest.raises(NotFoundError):
            db.append_message("missing", make_message("missing", 0))

    def test_message_refs_in_session_payload(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        db.append_message(session.id, make_message(session.id, 0))
        got = db.get("session", session.id)
        assert got.payload["message_refs"] == ["msg-0"]

    def test_status_transitions_and_sweep(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        db.set_session_status(session.id, "running")
        assert db.get("session", session.id).payload["status"] == "running"
        swept = db.sweep_running_sessions()
        assert session.id in swept
        assert db.get("session", session.id).payload["status"] == "idle"

    def test_delete_session_removes_messages(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        db.append_message(session.id, make_message(session.id, 0))
        db.delete("session", session.id)
        with pytest.raises(NotFoundError):
            db.load_history(session.id)


class TestResolveWorkflow:
    def test_embeds_transitive_registry(self, db):
        wf = seeded_workflow(db)
        spec = db.resolve_workflow(wf.id)
        assert len(spec.registry.agents) == 2
        assert len(spec.registry.models) == 1
        from agentloom.schema import validate

        assert validate(spec).ok

    def test_group_members_resolved(self, db):
        model = db.create("model", model_payload())
        members = [db.create("agent", {"name": f"member{i}", "type": "assistant",
                                       "model_ref": model.id}).id for i in range(2)]
        proxy = db.create("agent", {"name": "user_proxy", "type": "user_proxy"})
        group = db.create("agent", {"name": "team", "type": "group_chat", "members": members})
        wf = db.create("workflow", {"name": "g", "pattern": "autonomous_chat",
                                    "initiator_ref": proxy.id, "receiver_ref": group.id})
        spec = db.resolve_workflow(wf.id)
        assert len(spec.registry.agents) == 4


def structural_form(doc: str):
    """Replace entity ids with name-based placeholders for id-insensitive diffs."""
    data = json.loads(doc)
    id_to_name = {}
    for plural in ("agents", "models", "skills", "memories"):
        for e in data.get(plural, []):
            id_to_name[e["id"]] = f"{plural}:{e['name'] if 'name' in e else e['kind']}"
    if data.get("workflow"):
        id_to_name[data["workflow"]["id"]] = "workflow:" + data["workflow"]["name"]

    def swap(value):
        if isinstance(value, str):
            return id_to_name.get(value, value)
        if isinstance(value, list):
            return [swap(v) for v in value]
        if isinstance(value, dict):
            return {k: swap(v) for k, v in value.items()}
        return value

    swapped = swap(data)
    for plural in ("agents", "models", "skills", "memories"):
        if plural in swapped:
            swapped[plural] = sorted(swapped[plural], key=lambda e: e["id"])
    return swapped


class TestGallery:
    def test_export_import_round_trip(self, db):
        wf = seeded_workflow(db)
        doc = db.export_gallery("workflow", wf.id)
        item = db.import_gallery(doc)
        assert item.kind == "workflow"
        assert structural_form(item.payload) == structural_form(doc)
        # imported ids are fresh
        assert json.loads(item.payload)["workflow"]["id"] != wf.id

    def test_import_twice_distinct_ids(self, db):
        wf = seeded_workflow(db)
        doc = db.export_gallery("workflow", wf.id)
        one = db.import_gallery(doc)
        two = db.import_gallery(doc)
        assert json.loads(one.payload)["workflow"]["id"] != json.loads(two.payload)["workflow"]["id"]
        assert structural_form(one.payload) == structural_form(two.payload)

    def test_import_dangling_ref_rejected(self, db):
        spec = two_agent_spec()
        doc = json.loads(export_workflow(spec))
        doc["workflow"]["receiver_ref"] = "missing"
        with pytest.raises(ValidationFailed):
            db.import_gallery(json.dumps(doc))

    def test_import_external_doc(self, db):
        doc = export_workflow(two_agent_spec())
        item = db.import_gallery(doc, title="shared flow", description="from a friend")
        assert item.title == "shared flow"
        new_wf_id = json.loads(item.payload)["workflow"]["id"]
        assert db.get("workflow", new_wf_id)
        assert db.audit() == []

    def test_skill_bundle_export(self, db):
        skill = db.create("skill", skill_payload())
        doc = db.export_gallery("skill", skill.id)
        from agentloom.schema import parse_bundle

        bundle = parse_bundle(doc)
        assert bundle.workflow is None
        assert bundle.registry.skills[0].name == "echo_skill"

    def test_agent_bundle_includes_dependencies(self, db):
        model = db.create("model", model_payload())
        skill = db.create("skill", skill_payload())
        agent = db.create("agent", {"name": "helper", "type": "assistant",
                                    "model_ref": model.id, "skill_refs": [skill.id]})
        from agentloom.schema import parse_bundle

        bundle = parse_bundle(db.export_gallery("agent", agent.id))
        assert len(bundle.registry.models) == 1
        assert len(bundle.registry.skills) == 1

    def test_session_not_exportable(self, db):
        wf = seeded_workflow(db)
        session = db.create("session", {"workflow_ref": wf.id})
        with pytest.raises(ValidationFailed):
            db.export_gallery("session", session.id)

    def test_imported_workflow_parses_standalone(self, db):
        wf = seeded_workflow(db)
        item = db.import_gallery(db.export_gallery("workflow", wf.id))
        spec = parse_workflow(item.payload)
        from agentloom.schema import validate

        assert validate(spec).ok


class TestAudit:
    def test_clean_store(self, db):
        seeded_workflow(db)
        assert db.audit() == []

    def test_readonly_path_raises(self, tmp_path):
        ro = tmp_path / "ro"
        ro.mkdir()
        (ro / "x.db").touch()
        import os

        os.chmod(ro / "x.db", 0o444)
        os.chmod(ro, 0o555)
        try:
            if os.geteuid() == 0:
                pytest.skip("root bypasses file permissions")
            from agentloom.db import StoreError

            with pytest.raises(StoreError):
                DBManager(ro / "x.db")
        finally:
            os.chmod(ro, 0o755)
