/**
 * Stream framing.
 *
 * Binary frames are self-delimiting (leading int32 total length); JSON
 * frames carry an explicit 4-byte little-endian unsigned length prefix
 * followed by UTF-8 text.  The parser is incremental: feed arbitrary
 * chunks, collect complete frame payloads.
 */

import { Buffer } from "node:buffer";
import { BadLength, CodecId } from "./codec.js";

export function frameBytes(payload: Uint8Array, codec: CodecId): Buffer {
  const body = Buffer.from(payload);
  if (codec === "binary") {
    return body;
  }
  const prefix = Buffer.alloc(4);
  prefix.writeUInt32LE(body.length, 0);
  return Buffer.concat([prefix, body]);
}

export class FrameParser {
  private buffer: Buffer = Buffer.alloc(0);

  constructor(private readonly codec: CodecId, private readonly maxFrameBytes = 64 * 1024 * 1024) {}

  /** Absorb one chunk; return every complete frame payload now available. */
  feed(chunk: Uint8Array): Buffer[] {
    this.buffer = this.buffer.length === 0 ? Buffer.from(chunk) : Buffer.concat([this.buffer, chunk]);
    const frames: Buffer[] = [];
    for (;;) {
      if (this.buffer.length < 4) {
        break;
      }
      let total: number;
      let start: number;
      if (this.codec === "binary") {
        total = this.buffer.readInt32LE(0);
        start = 0;
        if (total < 5) {
          throw new BadLength(`frame length ${total} is below the 5-byte minimum`);
        }
      } else {
        total = this.buffer.readUInt32LE(0) + 4;
        start = 4;
      }
      if (total > this.maxFrameBytes + (this.codec === "binary" ? 0 : 4)) {
        throw new BadLength(`frame of ${total} bytes exceeds cap of ${this.maxFrameBytes}`);
      }
      if (this.buffer.length < total) {
        break;
      }
      frames.push(this.buffer.subarray(start, total));
      this.buffer = this.buffer.subarray(total);
    }
    return frames;
  }

  pendingBytes(): number {
    return this.buffer.length;
  }
}
