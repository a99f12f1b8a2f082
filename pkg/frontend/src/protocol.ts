/**
 * Length-prefixed message framing for the environment server protocol.
 *
 * Frame: 4-byte big-endian payload length, then a UTF-8 JSON body
 * {protocolVersion, type, payload}. Unknown body fields are ignored;
 * only a major version mismatch is an error.
 */

export const PROTOCOL_VERSION = "1.0";
export const MAX_FRAME_BYTES = 64 * 1024 * 1024;

export type MessageType = "HELLO" | "RESET" | "STEP" | "OBS" | "DONE" | "ERROR";

export interface Message {
  type: MessageType;
  payload: Record<string, unknown>;
  protocolVersion: string;
}

export class ProtocolError extends Error {}
export class FramingError extends ProtocolError {}
export class VersionError extends ProtocolError {}

function major(version: string): string {
  return version.split(".", 1)[0];
}

export function encodeMessage(type: MessageType, payload: Record<string, unknown>): Buffer {
  const body = Buffer.from(
    JSON.stringify({ protocolVersion: PROTOCOL_VERSION, type, payload }),
    "utf-8",
  );
  if (body.length > MAX_FRAME_BYTES) {
    throw new FramingError(`frame of ${body.length} bytes exceeds the limit`);
  }
  const header = Buffer.alloc(4);
  header.writeUInt32BE(body.length, 0);
  return Buffer.concat([header, body]);
}

export function decodeBody(body: Buffer): Message {
  let obj: unknown;
  try {
    obj = JSON.parse(body.toString("utf-8"));
  } catch (e) {
    throw new FramingError(`undecodable frame body: ${e}`);
  }
  if (typeof obj !== "object" || obj === null) {
    throw new FramingError("frame body must be a JSON object");
  }
  const rec = obj as Record<string, unknown>;
  const version = rec["protocolVersion"];
  if (typeof version !== "string") {
    throw new FramingError("missing protocolVersion");
  }
  if (major(version) !== major(PROTOCOL_VERSION)) {
    throw new VersionError(`protocol version ${version} not compatible with ${PROTOCOL_VERSION}`);
  }
  const type = rec["type"];
  if (
    type !== "HELLO" && type !== "RESET" && type !== "STEP" &&
    type !== "OBS" && type !== "DONE" && type !== "ERROR"
  ) {
    throw new ProtocolError(`unknown message type ${String(type)}`);
  }
  const payload = (rec["payload"] ?? {}) as Record<string, unknown>;
  return { type, payload, protocolVersion: version };
}

/** Incremental frame splitter over a byte stream. */
export class FrameReader {
  private buf = Buffer.alloc(0);

  /** Feed received bytes; returns every complete frame body now available. */
  feed(chunk: Buffer): Buffer[] {
    this.buf = Buffer.concat([this.buf, chunk]);
    const frames: Buffer[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const length = this.buf.readUInt32BE(0);
      if (length > MAX_FRAME_BYTES) {
        throw new FramingError(`advertised frame of ${length} bytes exceeds the limit`);
      }
      if (this.buf.length < 4 + length) break;
      frames.push(this.buf.subarray(4, 4 + length));
      this.buf = this.buf.subarray(4 + length);
    }
    return frames;
  }

  get pendingBytes(): number {
    return this.buf.length;
  }
}
