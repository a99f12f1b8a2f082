/**
 * Example driver: a random agent playing one episode against a running
 * environment server.
 *
 *   dmgsim env --scenario scenarios/default.json --listen 127.0.0.1:5554
 *   npm run agent -- 127.0.0.1:5554 [seed]
 */

import { Action, FlowSummary, makeEnv } from "./client.js";

/** mulberry32: tiny deterministic PRNG so episodes are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomAction(
  rnd: () => number,
  flows: FlowSummary[],
  pending: { requestId: number }[],
): Action {
  const action: Action = {};
  const verdicts: Record<string, unknown> = {};
  for (const req of pending) {
    const pick = rnd();
    verdicts[String(req.requestId)] =
      pick < 0.6 ? "ACCEPT" : pick < 0.8 ? "REJECT" : { SUGGEST: 0.25 + 0.75 * rnd() };
  }
  if (Object.keys(verdicts).length) action.admissionVerdicts = verdicts;
  const adjust: Record<string, number> = {};
  for (const f of flows) {
    if (!f.hasTspec || f.minDurationUs === null || f.maxDurationUs === null) continue;
    if (rnd() < 0.5) {
      adjust[String(f.flowId)] = Math.round(
        f.minDurationUs + rnd() * (f.maxDurationUs - f.minDurationUs),
      );
    }
  }
  if (Object.keys(adjust).length) action.durationAdjust = adjust;
  return action;
}

async function main(): Promise<void> {
  const endpoint = process.argv[2] ?? "127.0.0.1:5554";
  const seed = Number(process.argv[3] ?? 1);
  const env = await makeEnv(endpoint);
  console.log(
    `connected: ${env.scenario.nFlows} flows, ${env.scenario.nBis} beacon intervals per episode`,
  );
  const rnd = mulberry32(seed);
  let result = await env.reset(seed);
  let total = 0;
  let steps = 0;
  while (!result.done) {
    const network = (result.observation["network"] ?? {}) as Record<string, unknown>;
    const pending = (network["pendingAddtsRequests"] ?? []) as { requestId: number }[];
    result = await env.step(randomAction(rnd, env.scenario.flows, pending));
    total += result.reward;
    steps += 1;
  }
  console.log(`episode over: ${steps} steps, cumulative reward ${total.toFixed(4)}`);
  env.close();
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("randomAgent.js") || entry.endsWith("randomAgent.ts")) {
  main().catch((e) => {
    console.error(e);
    process.exit(1);
  });
}
