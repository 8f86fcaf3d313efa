// Test scaffolding: spawn a simulation-mode server and seed a study through
// the public API only.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ApiClient } from "../src/http.js";

export const ADMIN_SECRET = "ui-test-secret";

export interface TestServer {
  url: string;
  stop(): Promise<void>;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address && typeof address === "object") {
        const port = address.port;
        probe.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

export async function startServer(): Promise<TestServer> {
  const port = await freePort();
  const db = join(mkdtempSync(join(tmpdir(), "ck-ui-")), "ui.db");
  const child: ChildProcess = spawn("python3", [
    "-m", "carekernel.cli", "serve", "--db", db, "--port", String(port),
    "--simulation", "--bootstrap-admin-secret", ADMIN_SECRET,
    // clock jumps in these tests outlive the default token lifetime
    "--token-lifetime-hours", "100000",
  ], { stdio: "ignore" });
  const url = `http://127.0.0.1:${port}`;
  for (let attempt = 0; attempt < 100; attempt++) {
    try {
      await fetch(`${url}/health`);
      return {
        url,
        stop: () => new Promise((resolve) => {
          child.once("exit", () => resolve());
          child.kill("SIGKILL");
        }),
      };
    } catch {
      if (child.exitCode !== null) throw new Error("server died on startup");
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  child.kill("SIGKILL");
  throw new Error("server never came up");
}

export interface Fixture {
  admin: ApiClient;
  studyId: string;
  participant: string;
  participantSecret: string;
}

/** One active study with a heart-rate stream and one enrolled participant. */
export async function seedStudy(url: string): Promise<Fixture> {
  const admin = new ApiClient(url);
  await admin.login(ADMIN_SECRET);
  await admin.request("POST", "/studies", {
    body: { name: "UI", groups: ["all"], locale: "en-US", timezone: "UTC",
            study_id: "ui-study" },
  });
  await admin.request("POST", "/studies/ui-study/status",
                      { body: { status: "active" } });
  await admin.request("POST", "/studies/ui-study/streams", {
    body: { name: "heart_rate", value_schema: { bpm: "number" } },
  });
  const enrolled = await admin.request<{ anonymous_id: string; secret: string }>(
    "POST", "/studies/ui-study/participants", { body: {} });
  return {
    admin,
    studyId: "ui-study",
    participant: enrolled.anonymous_id,
    participantSecret: enrolled.secret,
  };
}

export async function ingestPoints(
  url: string, fixture: Fixture,
  points: { timestamp: string; bpm: number }[],
): Promise<void> {
  const client = new ApiClient(url);
  await client.login(fixture.participantSecret);
  await client.request("POST", "/ingest", {
    body: {
      participant: fixture.participant,
      points: points.map((p) => ({
        stream: "heart_rate", timestamp: p.timestamp,
        values: { bpm: p.bpm },
      })),
    },
  });
}

export async function setClock(fixture: Fixture, iso: string): Promise<void> {
  await fixture.admin.request("POST", "/test/clock", { body: { set: iso } });
}
