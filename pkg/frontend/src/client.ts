/**
 * Gym-style client for the beacon-interval environment server.
 *
 * The client is a pure transport: observations, rewards and done flags
 * come from the server untouched, so a client-driven trajectory is
 * byte-identical to driving the raw socket protocol directly.
 */

import * as net from "node:net";
import {
  FrameReader,
  Message,
  MessageType,
  ProtocolError,
  VersionError,
  decodeBody,
  encodeMessage,
} from "./protocol.js";

export class ConnectionError extends Error {}
export class EnvProtocolError extends ProtocolError {
  constructor(message: string, public readonly serverDiagnostic?: Record<string, unknown>) {
    super(message);
  }
}

export interface ObservationLayout {
  flowIds: number[];
  perFlowFields: string[];
  networkFields: string[];
  names: string[];
  size: number;
  scaling: Record<string, number>;
}

export interface FlowSummary {
  flowId: number;
  kind: string;
  hasTspec: boolean;
  allocationPeriodUs: number | null;
  minDurationUs: number | null;
  maxDurationUs: number | null;
}

export interface ScenarioSummary {
  nFlows: number;
  nBis: number;
  biDurationUs: number;
  simDurationUs: number;
  defaultSeed: number;
  flows: FlowSummary[];
}

export interface StepResult {
  observation: Record<string, unknown>;
  reward: number;
  done: boolean;
  info: Record<string, unknown>;
}

export interface Action {
  admissionVerdicts?: Record<string, unknown>;
  durationAdjust?: Record<string, number>;
  spatialGroupToggle?: Record<string, boolean>;
  tspecUpdates?: Record<string, { allocationPeriodUs: number; minDurationUs: number }>;
}

export interface MakeEnvOptions {
  timeoutMs?: number;
  /** Observer of every reply frame body, e.g. for transparency checks. */
  onReplyFrame?: (body: Buffer) => void;
}

function parseEndpoint(endpoint: string): { host: string; port: number } {
  const idx = endpoint.lastIndexOf(":");
  const port = Number(endpoint.slice(idx + 1));
  if (idx < 0 || !Number.isInteger(port)) {
    throw new ConnectionError(`endpoint ${endpoint} is not host:port`);
  }
  return { host: endpoint.slice(0, idx) || "127.0.0.1", port };
}

/** One environment session over one connection; not shareable. */
export class EnvHandle {
  private pending: { resolve: (m: Message) => void; reject: (e: Error) => void }[] = [];
  private reader = new FrameReader();
  private closed = false;

  private constructor(
    private readonly socket: net.Socket,
    public readonly layout: ObservationLayout,
    public readonly scenario: ScenarioSummary,
    public readonly protocolVersion: string,
    private readonly onReplyFrame?: (body: Buffer) => void,
  ) {}

  static async connect(endpoint: string, options: MakeEnvOptions = {}): Promise<EnvHandle> {
    const { host, port } = parseEndpoint(endpoint);
    const timeout = options.timeoutMs ?? 10_000;
    const socket = await new Promise<net.Socket>((resolve, reject) => {
      const s = net.createConnection({ host, port }, () => {
        s.setTimeout(0);
        resolve(s);
      });
      s.setTimeout(timeout, () => {
        s.destroy();
        reject(new ConnectionError(`timed out connecting to ${endpoint}`));
      });
      s.once("error", (e) => reject(new ConnectionError(`cannot reach ${endpoint}: ${e.message}`)));
    });

    const probe = new EnvHandle(
      socket,
      undefined as unknown as ObservationLayout,
      undefined as unknown as ScenarioSummary,
      "",
      options.onReplyFrame,
    );
    probe.attach();
    const hello = await probe.request("HELLO", {});
    if (hello.type !== "HELLO") {
      probe.close();
      throw new EnvProtocolError(`unexpected handshake reply ${hello.type}`, hello.payload);
    }
    (probe as { layout: ObservationLayout }).layout = hello.payload["layout"] as ObservationLayout;
    (probe as { scenario: ScenarioSummary }).scenario =
      hello.payload["scenario"] as ScenarioSummary;
    (probe as { protocolVersion: string }).protocolVersion = String(
      hello.payload["protocolVersion"],
    );
    return probe;
  }

  private attach(): void {
    this.socket.on("data", (chunk: Buffer) => {
      let frames: Buffer[];
      try {
        frames = this.reader.feed(chunk);
      } catch (e) {
        this.failAll(e as Error);
        return;
      }
      for (const body of frames) {
        this.onReplyFrame?.(body);
        const waiter = this.pending.shift();
        if (!waiter) continue; // unsolicited frame; protocol is request/reply
        try {
          waiter.resolve(decodeBody(body));
        } catch (e) {
          waiter.reject(e as Error);
        }
      }
    });
    this.socket.on("error", (e) => this.failAll(new ConnectionError(e.message)));
    this.socket.on("close", () =>
      this.failAll(new ConnectionError("connection closed by the server")),
    );
  }

  private failAll(err: Error): void {
    const waiters = this.pending;
    this.pending = [];
    for (const w of waiters) w.reject(err);
  }

  private request(type: MessageType, payload: Record<string, unknown>): Promise<Message> {
    if (this.closed) {
      return Promise.reject(new ConnectionError("handle is closed"));
    }
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.socket.write(encodeMessage(type, payload));
    });
  }

  private unwrap(reply: Message): StepResult {
    if (reply.type === "ERROR") {
      if (String(reply.payload["error"]) === "version") {
        throw new VersionError(String(reply.payload["message"]));
      }
      throw new EnvProtocolError(
        `${reply.payload["error"]}: ${reply.payload["message"] ?? ""}`,
        reply.payload,
      );
    }
    if (reply.type !== "OBS" && reply.type !== "DONE") {
      throw new EnvProtocolError(`unexpected reply ${reply.type}`, reply.payload);
    }
    return {
      observation: reply.payload["observation"] as Record<string, unknown>,
      reward: Number(reply.payload["reward"]),
      done: Boolean(reply.payload["done"]),
      info: (reply.payload["info"] ?? {}) as Record<string, unknown>,
    };
  }

  async reset(seed?: number, rewardWeights?: Record<string, number>): Promise<StepResult> {
    const payload: Record<string, unknown> = {};
    if (seed !== undefined) payload["seed"] = seed;
    if (rewardWeights !== undefined) payload["rewardWeights"] = rewardWeights;
    return this.unwrap(await this.request("RESET", payload));
  }

  async step(action: Action): Promise<StepResult> {
    return this.unwrap(await this.request("STEP", { action }));
  }

  close(): void {
    this.closed = true;
    this.socket.destroy();
  }
}

/** Connect and complete the HELLO handshake. */
export function makeEnv(endpoint: string, options: MakeEnvOptions = {}): Promise<EnvHandle> {
  return EnvHandle.connect(endpoint, options);
}
