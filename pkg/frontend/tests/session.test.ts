// Role-gated navigation: render the nav under every role and assert the
// visible route set equals the projection of the served permission matrix.

import assert from "node:assert/strict";
import { after, before, describe, it } from "node:test";

import { ApiClient } from "../src/http.js";
import { renderNav } from "../src/render.js";
import { NAV_ROUTES } from "../src/routes.js";
import { MatrixDoc, UiSession } from "../src/session.js";
import { ADMIN_SECRET, Fixture, TestServer, seedStudy, startServer } from "./helpers.js";

const RESEARCHER_ROLES = ["study_manager", "recruiter", "data_analyst", "clinician"];

describe("role-gated navigation", () => {
  let server: TestServer;
  let fixture: Fixture;
  let matrix: MatrixDoc;
  const credentials = new Map<string, string>();

  before(async () => {
    server = await startServer();
    fixture = await seedStudy(server.url);
    matrix = await fixture.admin.request<MatrixDoc>("GET", "/api/matrix");
    credentials.set("admin", ADMIN_SECRET);
    for (const role of RESEARCHER_ROLES) {
      const created = await fixture.admin.request<{ secret: string }>(
        "POST", "/principals", {
          body: { kind: "researcher",
                  grants: [{ study_id: fixture.studyId, role }] },
        });
      credentials.set(role, created.secret);
    }
    credentials.set("participant", fixture.participantSecret);
  });

  after(async () => {
    await server.stop();
  });

  it("every role sees exactly the matrix projection", async () => {
    for (const [role, credential] of credentials) {
      const session = new UiSession(new ApiClient(server.url));
      await session.login(credential);
      if (role !== "admin") {
        assert.equal(session.roleFor(fixture.studyId), role);
      }
      const visible = session.visibleRoutes(fixture.studyId).map((r) => r.id);
      const expected = NAV_ROUTES
        .filter((route) =>
          matrix.permissions[route.requires]?.[role] === "allow")
        .map((r) => r.id);
      assert.deepEqual(visible, expected, `role ${role}`);
    }
  });

  it("participant role sees only self-scoped data routes", async () => {
    const session = new UiSession(new ApiClient(server.url));
    await session.login(fixture.participantSecret);
    const ids = session.visibleRoutes(fixture.studyId).map((r) => r.id);
    assert.deepEqual(ids, ["board", "charts"]);
  });

  it("deny-by-default without a grant on the study", async () => {
    const session = new UiSession(new ApiClient(server.url));
    await session.login(credentials.get("study_manager")!);
    assert.deepEqual(session.visibleRoutes("some-other-study"), []);
  });

  it("rendered nav contains exactly the visible routes", async () => {
    const session = new UiSession(new ApiClient(server.url));
    await session.login(credentials.get("data_analyst")!);
    const visible = session.visibleRoutes(fixture.studyId);
    const html = renderNav(visible, visible[0]?.id ?? null);
    for (const route of NAV_ROUTES) {
      const present = html.includes(`data-route="${route.id}"`);
      assert.equal(present, visible.some((v) => v.id === route.id), route.id);
    }
  });
});
