"""HTTP surface over the kernel.

A small routing table drives everything: each route declares its method,
path pattern, required permission, how the study in scope is resolved, and
whether participants may call it for their own resources. The same table is
served as a machine-readable description at /api/spec, which the dashboard
UI and the simulator use to generate their clients, and which the access
control probe walks to verify every (role, endpoint) decision against the
shipped permission matrix.

Self scoping: a participant-kind principal may only touch resources whose
participant is itself; any cross-participant request is denied regardless of
the matrix.

The test-only clock endpoints exist only when the server was started in
simulation mode; production servers refuse to register them. Advancing the
simulated clock drives the cron scheduler synchronously over every crossed
minute.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from datetime import timedelta
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .errors import (
    AuthorizationFailure,
    BadRequest,
    KernelError,
    NotFound,
)
from .gateway import AuthContext
from .service import CareKernel
from .util import iso, parse_ts

logger = logging.getLogger(__name__)


class Route:
    def __init__(self, method: str, pattern: str, permission: str | None,
                 handler, study_from: str | None = "path:study_id",
                 self_scoped: bool = False, public: bool = False,
                 simulation_only: bool = False):
        self.method = method
        self.pattern = pattern
        self.permission = permission
        self.handler = handler
        self.study_from = study_from
        self.self_scoped = self_scoped
        self.public = public
        self.simulation_only = simulation_only
        regex = re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern)
        self.regex = re.compile(f"^{regex}$")

    def describe(self) -> dict:
        return {
            "method": self.method,
            "path": self.pattern,
            "permission": self.permission,
            "study_from": self.study_from,
            "self_scoped": self.self_scoped,
            "simulation_only": self.simulation_only,
            "public": self.public,
        }


class Api:
    """Kernel-backed request dispatcher, independent of the socket server."""

    def __init__(self, kernel: CareKernel):
        self.kernel = kernel
        self.routes: list[Route] = []
        self._register_routes()

    # -- dispatch -----------------------------------------------------------

    def handle(self, method: str, path: str, query: dict, body,
               bearer: str | None, raw_body: bytes | None = None) -> tuple[int, dict]:
        route, params = self._match(method, path)
        if route is None:
            return 404, {"error": "not-found", "message": f"no route {method} {path}"}
        if route.simulation_only and not self.kernel.simulation:
            return 404, {"error": "not-found",
                         "message": "endpoint exists only in simulation mode"}
        try:
            ctx = None
            if not route.public:
                ctx = self.kernel.gateway.resolve_token(bearer)
                if route.permission is not None:
                    study_id = self._study_in_scope(route, params, query, body, ctx)
                    self.kernel.gateway.authorize(ctx, route.permission, study_id)
                self._enforce_self_scope(route, params, query, body, ctx)
            result = route.handler(ctx, params, query, body, raw_body)
            if isinstance(result, tuple):
                return result
            return 200, result
        except KernelError as exc:
            return exc.http_status, exc.to_dict()
        except Exception:
            logger.exception("unhandled error on %s %s", method, path)
            return 500, {"error": "internal-error", "message": "unhandled error"}

    def _match(self, method: str, path: str):
        for route in self.routes:
            if route.method != method:
                continue
            m = route.regex.match(path)
            if m:
                return route, m.groupdict()
        return None, None

    def _study_in_scope(self, route: Route, params: dict, query: dict, body,
                        ctx: AuthContext) -> str:
        sf = route.study_from
        if sf is None:
            return "*"
        kind, _, name = sf.partition(":")
        if kind == "path":
            return params[name]
        if kind == "query":
            value = query.get(name)
            if not value:
                raise BadRequest(f"query parameter {name!r} is required")
            return value
        if kind == "body":
            value = (body or {}).get(name)
            if not value:
                raise BadRequest(f"body field {name!r} is required")
            return value
        if kind == "self":
            record = self.kernel.gateway.participant_record(ctx.principal_id)
            if record is None:
                # Non-participant callers fall through to the global scope so
                # the matrix decides (participant-only permissions deny).
                return "*"
            return record["study_id"]
        if kind == "participant":
            pid = self._target_participant(route, params, query, body, ctx)
            if pid is None:
                raise BadRequest("participant is required")
            record = self.kernel.gateway.participant_record(pid)
            if record is None:
                raise NotFound(f"participant {pid}")
            return record["study_id"]
        if kind == "connector":
            conn = self.kernel.collection.get_connector(params[name])
            return conn["study_id"]
        raise BadRequest(f"unresolvable study scope {sf!r}")

    def _target_participant(self, route: Route, params: dict, query: dict, body,
                            ctx: AuthContext) -> str | None:
        pid = params.get("participant_id") if params else None
        if pid == "me":
            return ctx.principal_id
        if pid:
            return pid
        if body and isinstance(body, dict) and body.get("participant"):
            return body["participant"]
        if query.get("participant"):
            return query["participant"]
        return None

    def _enforce_self_scope(self, route: Route, params: dict, query: dict, body,
                            ctx: AuthContext) -> None:
        if not ctx.is_participant():
            return
        target = self._target_participant(route, params, query, body, ctx)
        if route.self_scoped:
            if target is None or target == ctx.principal_id:
                return
            raise AuthorizationFailure(
                "participants may only access their own resources",
                permission=route.permission,
            )
        if target is not None and target != ctx.principal_id:
            raise AuthorizationFailure(
                "participants may only access their own resources",
                permission=route.permission,
            )

    def spec(self) -> dict:
        return {
            "format": 1,
            "service": "carekernel",
            "matrix_version": self.kernel.matrix.version,
            "roles": list(self.kernel.matrix.as_dict()["roles"]),
            "routes": [r.describe() for r in self.routes
                       if not r.simulation_only or self.kernel.simulation],
        }

    # -- routes ----------------------------------------------------------------

    def _register_routes(self) -> None:
        k = self.kernel
        add = self.routes.append

        # public
        add(Route("GET", "/health", None, lambda *a: {"status": "ok"},
                  study_from=None, public=True))
        add(Route("GET", "/api/spec", None, lambda *a: self.spec(),
                  study_from=None, public=True))
        add(Route("GET", "/api/matrix", None,
                  lambda *a: k.matrix.as_dict(), study_from=None, public=True))
        add(Route("POST", "/auth/login", None,
                  lambda ctx, p, q, b, r: k.gateway.authenticate((b or {}).get("credential")),
                  study_from=None, public=True))
        add(Route("POST", "/signup/{link_id}", None,
                  lambda ctx, p, q, b, r: k.gateway.enroll_anonymous(
                      p["link_id"], (b or {}).get("email")),
                  study_from=None, public=True))

        # global administration
        add(Route("POST", "/principals", "principal.create",
                  lambda ctx, p, q, b, r: k.gateway.create_principal(
                      (b or {}).get("kind"), (b or {}).get("grants", []),
                      principal_id=(b or {}).get("principal_id")),
                  study_from=None))
        add(Route("POST", "/studies", "study.create",
                  lambda ctx, p, q, b, r: k.dashboard.create_study(
                      (b or {}).get("name"), (b or {}).get("groups", []),
                      (b or {}).get("locale", "en-US"),
                      (b or {}).get("timezone", "UTC"),
                      study_id=(b or {}).get("study_id")),
                  study_from=None))
        add(Route("GET", "/studies", None, self._list_studies, study_from=None))

        # study management
        add(Route("GET", "/studies/{study_id}", "study.read",
                  lambda ctx, p, q, b, r: k.dashboard.get_study(p["study_id"])))
        add(Route("POST", "/studies/{study_id}/status", "study.manage",
                  lambda ctx, p, q, b, r: k.dashboard.set_status(
                      p["study_id"], (b or {}).get("status"))))
        add(Route("PUT", "/studies/{study_id}/templates", "study.manage",
                  lambda ctx, p, q, b, r: k.dashboard.set_templates(
                      p["study_id"], (b or {}).get("templates", {}))))
        add(Route("GET", "/studies/{study_id}/participants", "participant.list",
                  lambda ctx, p, q, b, r: {"participants": k.dashboard.list_participants(p["study_id"])}))
        add(Route("POST", "/studies/{study_id}/participants", "participant.create",
                  lambda ctx, p, q, b, r: k.gateway.enroll_direct(
                      p["study_id"], group_id=(b or {}).get("group"),
                      requested_id=(b or {}).get("requested_id"))))
        add(Route("POST", "/studies/{study_id}/recruitment-links", "recruitment.create",
                  lambda ctx, p, q, b, r: k.dashboard.create_recruitment_link(
                      p["study_id"], (b or {}).get("group"),
                      max_uses=(b or {}).get("max_uses"),
                      expires_at=(b or {}).get("expires_at"))))

        # streams and data
        add(Route("POST", "/studies/{study_id}/streams", "stream.register",
                  lambda ctx, p, q, b, r: k.collection.register_stream(
                      p["study_id"], (b or {}).get("name"),
                      (b or {}).get("value_schema"),
                      sensitive=bool((b or {}).get("sensitive", False)),
                      retention=(b or {}).get("retention"))))
        add(Route("GET", "/studies/{study_id}/streams", "stream.read",
                  lambda ctx, p, q, b, r: {"streams": k.collection.list_streams(p["study_id"])}))
        add(Route("GET", "/studies/{study_id}/streams/{stream}/points", "data.query",
                  self._query_points, self_scoped=True))
        add(Route("POST", "/ingest", "data.ingest", self._ingest,
                  study_from="participant:participant", self_scoped=True))

        # connectors
        add(Route("POST", "/connectors", "connector.link", self._link_connector,
                  study_from="participant:participant", self_scoped=True))
        add(Route("POST", "/connectors/{connector_id}/sync", "connector.sync",
                  self._sync_connector, study_from="connector:connector_id",
                  self_scoped=True))
        add(Route("POST", "/connectors/{connector_id}/upstream", "simulation.control",
                  self._seed_connector, study_from="connector:connector_id",
                  simulation_only=True))

        # summaries and profiles
        add(Route("GET", "/participants/{participant_id}/summary", "summary.read",
                  lambda ctx, p, q, b, r: k.collection.daily_summary(
                      self._pid(ctx, p), q.get("date")),
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("GET", "/participants/{participant_id}/profile", "profile.read",
                  self._get_participant_profile,
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("PUT", "/participants/{participant_id}/profile/{key}", "profile.write",
                  self._set_participant_profile,
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("GET", "/participants/{participant_id}/profile/{key}/history",
                  "profile.history.read",
                  lambda ctx, p, q, b, r: {"history": k.profiles.history(
                      "participant", self._pid(ctx, p), p["key"])},
                  study_from="participant:participant_id"))
        add(Route("PUT", "/participants/{participant_id}/settings", "settings.edit",
                  self._set_settings, study_from="participant:participant_id",
                  self_scoped=True))
        # /profiles/{scope}/{id}[...] aliases over the same handlers
        add(Route("GET", "/profiles/participant/{participant_id}", "profile.read",
                  self._get_participant_profile,
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("GET", "/profiles/participant/{participant_id}/{key}",
                  "profile.read", self._get_participant_profile_key,
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("PUT", "/profiles/participant/{participant_id}/{key}",
                  "profile.write", self._set_participant_profile,
                  study_from="participant:participant_id", self_scoped=True))
        add(Route("GET", "/profiles/group/{study_id}/{group_id}", "profile.read",
                  lambda ctx, p, q, b, r: k.profiles.get_profile(
                      p["study_id"], "group", f"{p['study_id']}/{p['group_id']}",
                      as_participant=False)))
        add(Route("PUT", "/profiles/group/{study_id}/{group_id}/{key}",
                  "profile.write", self._set_group_profile))
        add(Route("PUT", "/studies/{study_id}/profile-schema", "profile.schema.edit",
                  lambda ctx, p, q, b, r: k.profiles.define_schema(
                      p["study_id"], (b or {}).get("keys", {}))))
        add(Route("GET", "/studies/{study_id}/profile-schema", "profile.schema.read",
                  lambda ctx, p, q, b, r: k.profiles.get_schema(p["study_id"])))
        add(Route("GET", "/studies/{study_id}/groups/{group_id}/profile", "profile.read",
                  lambda ctx, p, q, b, r: k.profiles.get_profile(
                      p["study_id"], "group", f"{p['study_id']}/{p['group_id']}",
                      as_participant=False)))
        add(Route("PUT", "/studies/{study_id}/groups/{group_id}/profile/{key}",
                  "profile.write", self._set_group_profile))
        add(Route("POST", "/studies/{study_id}/groups/{group_id}/profile/clone-to/{dst_group}",
                  "profile.clone",
                  lambda ctx, p, q, b, r: {"copied": k.profiles.clone_group_profile(
                      p["study_id"], p["group_id"], p["dst_group"], ctx.principal_id)}))

        # interactions
        add(Route("PUT", "/studies/{study_id}/interactions/{interaction_id}",
                  "interaction.edit",
                  lambda ctx, p, q, b, r: k.interactions.put_definition(
                      p["study_id"], p["interaction_id"], b or {})))
        add(Route("GET", "/studies/{study_id}/interactions", "interaction.read",
                  lambda ctx, p, q, b, r: {"interactions": k.interactions.list_definitions(p["study_id"])}))
        add(Route("GET", "/studies/{study_id}/responses", "interaction.read",
                  lambda ctx, p, q, b, r: {"responses": k.interactions.list_responses(
                      p["study_id"], interaction_id=q.get("interaction"),
                      participant=q.get("participant"))}))
        add(Route("GET", "/participants/me/interactions", "interaction.respond",
                  lambda ctx, p, q, b, r: {"interactions": k.interactions.list_available(
                      ctx.principal_id, k.clock.now())},
                  study_from="self", self_scoped=True))
        add(Route("POST", "/participants/me/interactions/{interaction_id}/responses",
                  "interaction.respond",
                  lambda ctx, p, q, b, r: k.interactions.submit_response(
                      ctx.principal_id, p["interaction_id"],
                      (b or {}).get("answers", {}), meta=(b or {}).get("meta"),
                      started_at=(b or {}).get("started_at")),
                  study_from="self", self_scoped=True))

        # rules and executions
        add(Route("PUT", "/studies/{study_id}/rules/{rule_id}", "rule.edit",
                  lambda ctx, p, q, b, r: k.engine.register_rule(
                      p["study_id"], p["rule_id"], b or {})))
        add(Route("GET", "/studies/{study_id}/rules", "rule.read",
                  lambda ctx, p, q, b, r: {"rules": k.engine.list_rules(p["study_id"])}))
        add(Route("POST", "/studies/{study_id}/rules/{rule_id}/test", "rule.test",
                  self._rule_dry_run))
        add(Route("GET", "/executions", "execution.read",
                  lambda ctx, p, q, b, r: {"executions": k.engine.list_executions(
                      study_id=q.get("study"), rule_id=q.get("rule"),
                      participant=q.get("participant"), status=q.get("status"))},
                  study_from="query:study"))

        # sdk
        add(Route("POST", "/sdk/fetch", "sdk.fetch",
                  lambda ctx, p, q, b, r: {"results": k.engine.sdk_fetch(
                      (b or {}).get("study_id"), (b or {}).get("queries", []))},
                  study_from="body:study_id"))
        add(Route("POST", "/sdk/invoke", "sdk.invoke",
                  lambda ctx, p, q, b, r: k.engine.sdk_invoke(
                      (b or {}).get("study_id"), (b or {}).get("actions", []),
                      participant=(b or {}).get("participant"),
                      idempotency_key=(b or {}).get("idempotency_key")),
                  study_from="body:study_id"))

        # annotations, notifications, outbox
        add(Route("POST", "/studies/{study_id}/annotations", "annotation.create",
                  lambda ctx, p, q, b, r: k.dashboard.annotate(
                      ctx.principal_id, p["study_id"], (b or {}).get("participant"),
                      (b or {}).get("stream_suffix"), (b or {}).get("timestamp"),
                      (b or {}).get("values"))))
        add(Route("POST", "/studies/{study_id}/notifications", "notification.send",
                  lambda ctx, p, q, b, r: {"outcomes": k.dashboard.send_manual_notification(
                      p["study_id"], (b or {}).get("participants", []),
                      (b or {}).get("title", ""), (b or {}).get("body", ""))}))
        add(Route("GET", "/studies/{study_id}/outbox", "outbox.read",
                  lambda ctx, p, q, b, r: {"outbox": k.dashboard.list_outbox(
                      p["study_id"], channel=q.get("channel"), rule_id=q.get("rule"))}))

        # blobs
        add(Route("POST", "/blobs", "blob.write",
                  lambda ctx, p, q, b, r: {"ref": k.put_blob(r or b"")},
                  study_from="query:study"))
        add(Route("GET", "/blobs/{ref}", "blob.read", self._get_blob,
                  study_from="query:study"))

        # simulation-only clock control
        add(Route("GET", "/test/clock", "simulation.control",
                  lambda ctx, p, q, b, r: {"now": iso(k.clock.now())},
                  study_from=None, simulation_only=True))
        add(Route("POST", "/test/clock", "simulation.control", self._set_clock,
                  study_from=None, simulation_only=True))
        add(Route("POST", "/test/tick", "simulation.control",
                  lambda ctx, p, q, b, r: {"executions": len(k.engine.on_tick(k.clock.now()))},
                  study_from=None, simulation_only=True))

    # -- handlers needing more than a lambda ------------------------------------

    def _pid(self, ctx: AuthContext, params: dict) -> str:
        pid = params.get("participant_id")
        return ctx.principal_id if pid == "me" else pid

    def _list_studies(self, ctx, params, query, body, raw):
        studies = self.kernel.dashboard.list_studies()
        visible = [s for s in studies
                   if self.kernel.gateway.check(ctx, "study.read", s["study_id"])]
        return {"studies": visible}

    def _query_points(self, ctx, params, query, body, raw):
        agg = None
        if query.get("bin") or query.get("fn"):
            agg = {"bin": query.get("bin"), "fn": query.get("fn")}
            if query.get("field"):
                agg["field"] = query["field"]
        participant = query.get("participant")
        if ctx.is_participant():
            participant = ctx.principal_id
        rows = self.kernel.collection.query_stream(
            params["study_id"], params["stream"], participant=participant,
            ts_from=query.get("from"), ts_to=query.get("to"), agg=agg,
        )
        return {"rows": rows}

    def _ingest(self, ctx, params, query, body, raw):
        body = body or {}
        participant = body.get("participant")
        if ctx.is_participant():
            participant = ctx.principal_id
        record = self.kernel.gateway.participant_record(participant)
        if record is None:
            raise NotFound(f"participant {participant}")
        source = "direct_device"
        if ctx.kind == "service":
            source = body.get("source", "connector")
        return self.kernel.collection.ingest_batch(
            record["study_id"], participant, body.get("points", []), source=source,
        )

    def _link_connector(self, ctx, params, query, body, raw):
        body = body or {}
        participant = body.get("participant")
        if ctx.is_participant():
            participant = ctx.principal_id
        record = self.kernel.gateway.participant_record(participant)
        if record is None:
            raise NotFound(f"participant {participant}")
        return self.kernel.collection.link_connector(
            record["study_id"], participant, body.get("vendor"),
            connector_id=body.get("connector_id"),
        )

    def _sync_connector(self, ctx, params, query, body, raw):
        conn = self.kernel.collection.get_connector(params["connector_id"])
        if ctx.is_participant() and conn["participant"] != ctx.principal_id:
            raise AuthorizationFailure(
                "participants may only sync their own connectors",
                permission="connector.sync",
            )
        return self.kernel.collection.sync_connector(params["connector_id"])

    def _seed_connector(self, ctx, params, query, body, raw):
        from .connectors import seed_upstream

        added = seed_upstream(self.kernel.storage, params["connector_id"],
                              (body or {}).get("rows", []))
        return {"added": added}

    def _get_participant_profile(self, ctx, params, query, body, raw):
        pid = self._pid(ctx, params)
        record = self.kernel.gateway.participant_record(pid)
        if record is None:
            raise NotFound(f"participant {pid}")
        return {"profile": self.kernel.profiles.get_profile(
            record["study_id"], "participant", pid,
            as_participant=ctx.is_participant())}

    def _get_participant_profile_key(self, ctx, params, query, body, raw):
        pid = self._pid(ctx, params)
        record = self.kernel.gateway.participant_record(pid)
        if record is None:
            raise NotFound(f"participant {pid}")
        profile = self.kernel.profiles.get_profile(
            record["study_id"], "participant", pid,
            as_participant=ctx.is_participant())
        key = params["key"]
        if key not in profile:
            raise NotFound(f"profile key {key!r}")
        return {"key": key, **profile[key]}

    def _set_participant_profile(self, ctx, params, query, body, raw):
        pid = self._pid(ctx, params)
        record = self.kernel.gateway.participant_record(pid)
        if record is None:
            raise NotFound(f"participant {pid}")
        study_id = record["study_id"]
        role = ctx.role_for(study_id) or "participant"
        body = body or {}
        version = self.kernel.profiles.set_value(
            study_id, "participant", pid, params["key"], body.get("value"),
            writer_role=role, writer_id=ctx.principal_id,
            expected_version=body.get("expected_version"),
        )
        return {"key": params["key"], "version": version}

    def _set_group_profile(self, ctx, params, query, body, raw):
        study_id = params["study_id"]
        role = ctx.role_for(study_id) or "participant"
        body = body or {}
        version = self.kernel.profiles.set_value(
            study_id, "group", f"{study_id}/{params['group_id']}", params["key"],
            body.get("value"), writer_role=role, writer_id=ctx.principal_id,
            expected_version=body.get("expected_version"),
        )
        return {"key": params["key"], "version": version}

    def _set_settings(self, ctx, params, query, body, raw):
        pid = self._pid(ctx, params)
        optout = bool((body or {}).get("sensitive_optout", False))
        self.kernel.gateway.set_sensitive_optout(pid, optout)
        return {"participant": pid, "sensitive_optout": optout}

    def _rule_dry_run(self, ctx, params, query, body, raw):
        body = body or {}
        doc = body.get("rule_doc")
        if doc is None:
            doc = self.kernel.engine.get_rule(params["study_id"], params["rule_id"])["doc"]
        return self.kernel.engine.dry_run(params["study_id"], doc,
                                          body.get("context", {}))

    def _get_blob(self, ctx, params, query, body, raw):
        content = self.kernel.get_blob(params["ref"])
        return 200, {"ref": params["ref"], "content_hex": content.hex()}

    def _set_clock(self, ctx, params, query, body, raw):
        body = body or {}
        clock = self.kernel.clock
        if not hasattr(clock, "set"):
            raise BadRequest("server clock is not adjustable")
        if body.get("set"):
            clock.set(parse_ts(body["set"]))
        elif body.get("advance_minutes") is not None:
            clock.set(clock.now() + timedelta(minutes=float(body["advance_minutes"])))
        executions = self.kernel.engine.on_tick(clock.now())
        return {"now": iso(clock.now()), "cron_executions": len(executions)}


# ---------------------------------------------------------------------------
# Socket server
# ---------------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    api: Api = None  # set on the subclass by make_server
    protocol_version = "HTTP/1.1"
    # Small JSON responses stall ~40ms per request under Nagle + delayed ACK.
    disable_nagle_algorithm = True

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        body = None
        if raw and self.headers.get("Content-Type", "").startswith("application/json"):
            try:
                body = json.loads(raw)
            except json.JSONDecodeError:
                self._send(400, {"error": "bad-request", "message": "invalid JSON body"})
                return
        bearer = None
        auth = self.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            bearer = auth[len("Bearer "):]
        status, doc = self.api.handle(method, parsed.path, query, body, bearer,
                                      raw_body=raw)
        self._send(status, doc)

    def _send(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_DELETE(self):
        self._dispatch("DELETE")


class _Server(ThreadingHTTPServer):
    daemon_threads = True


def make_server(kernel: CareKernel, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    api = Api(kernel)
    handler = type("KernelHandler", (_Handler,), {"api": api})
    server = _Server((host, port), handler)
    server.api = api
    return server


class SchedulerThread(threading.Thread):
    """Production ticker: calls on_tick once per minute of wall time."""

    def __init__(self, kernel: CareKernel, interval_seconds: float = 60.0):
        super().__init__(daemon=True)
        self.kernel = kernel
        self.interval = interval_seconds
        self._stop = threading.Event()

    def run(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.kernel.engine.on_tick(self.kernel.clock.now())
            except Exception:
                logger.exception("scheduler tick failed")

    def stop(self) -> None:
        self._stop.set()
