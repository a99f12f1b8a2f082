import { ChildProcess, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));
export const REPO_ROOT = path.resolve(here, "..", "..");

export function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

export function writeTempScenario(doc: unknown): string {
  const file = path.join(os.tmpdir(), `dmgsim-scenario-${process.pid}-${Date.now()}.json`);
  fs.writeFileSync(file, JSON.stringify(doc));
  return file;
}

export interface ServerProc {
  proc: ChildProcess;
  endpoint: string;
  stop: () => Promise<void>;
}

export async function startServer(scenarioPath: string): Promise<ServerProc> {
  const port = await freePort();
  const endpoint = `127.0.0.1:${port}`;
  const proc = spawn(
    "python3",
    ["-m", "dmgsim.cli", "env", "--scenario", scenarioPath, "--listen", endpoint],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  proc.stderr?.on("data", (d) => (stderr += String(d)));
  await waitForPort(port, proc, () => stderr);
  return {
    proc,
    endpoint,
    stop: () =>
      new Promise<void>((resolve) => {
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
        setTimeout(() => {
          proc.kill("SIGKILL");
          resolve();
        }, 5_000).unref();
      }),
  };
}

async function waitForPort(port: number, proc: ChildProcess, errs: () => string): Promise<void> {
  for (let i = 0; i < 100; i++) {
    if (proc.exitCode !== null) {
      throw new Error(`server exited early (${proc.exitCode}): ${errs()}`);
    }
    try {
      await new Promise<void>((resolve, reject) => {
        const s = net.createConnection({ host: "127.0.0.1", port }, () => {
          s.destroy();
          resolve();
        });
        s.on("error", reject);
      });
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  throw new Error(`server never opened port ${port}: ${errs()}`);
}

export function baseScenarioDoc(nBis: number, seed = 7): unknown {
  return {
    stations: [
      { aid: 0, role: "PCP_AP", position: [0, 0] },
      { aid: 1, position: [3, 0] },
      { aid: 2, position: [0, 3] },
    ],
    flows: [
      { flowId: 1, srcAid: 1, dstAid: 0, kind: "CBR", meanRateBps: 50_000_000 },
      { flowId: 2, srcAid: 2, dstAid: 0, kind: "POISSON", meanRateBps: 20_000_000 },
    ],
    tspecs: [
      { flowId: 1, allocationPeriodUs: 25_000, minDurationUs: 2_000, maxDurationUs: 4_000 },
    ],
    sim: { durationUs: nBis * 100_000, seed },
  };
}
