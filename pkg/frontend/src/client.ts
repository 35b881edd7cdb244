/**
 * Blocking-style bridge client over TCP.
 *
 * One socket, one incremental frame parser; subscription callbacks fire in
 * frame-arrival order on the socket's data path.  Broker status frames
 * ({"op": "status", ...}) are recorded in `statuses`, handed to `onStatus`
 * when set, and error-level ones also become BrokerStatusError instances in
 * `errors` so scripts can fail loudly after the fact.
 */

import * as net from "node:net";
import { decodeDocument, decodeJson, encodeDocument, encodeJson, CodecId, JsonHints } from "./codec.js";
import { Document, Value, doc } from "./document.js";
import { FrameParser, frameBytes } from "./frames.js";

export type MessageCallback = (msg: Document) => void;

export class BrokerStatusError extends Error {
  constructor(readonly status: Document) {
    super(String(status.get("msg") ?? "broker error"));
  }
}

export interface SessionOptions {
  hints?: JsonHints;
  onStatus?: (status: Document) => void;
  connectTimeoutMs?: number;
}

export class ClientSession {
  readonly statuses: Document[] = [];
  readonly errors: BrokerStatusError[] = [];

  private readonly callbacks = new Map<string, MessageCallback>();
  private readonly parser: FrameParser;
  private closed = false;

  private constructor(
    private readonly socket: net.Socket,
    readonly codec: CodecId,
    private readonly options: SessionOptions,
  ) {
    this.parser = new FrameParser(codec);
    socket.on("data", (chunk) => this.onData(chunk));
    socket.on("error", () => this.socket.destroy());
  }

  static connect(host: string, port: number, codec: CodecId = "binary", options: SessionOptions = {}): Promise<ClientSession> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port, noDelay: true });
      const timeout = setTimeout(
        () => {
          socket.destroy();
          reject(new Error(`connect timeout to ${host}:${port}`));
        },
        options.connectTimeoutMs ?? 10_000,
      );
      socket.once("connect", () => {
        clearTimeout(timeout);
        resolve(new ClientSession(socket, codec, options));
      });
      socket.once("error", (err) => {
        clearTimeout(timeout);
        reject(err);
      });
    });
  }

  private onData(chunk: Buffer): void {
    let frames: Buffer[];
    try {
      frames = this.parser.feed(chunk);
    } catch (err) {
      this.socket.destroy();
      return;
    }
    for (const payload of frames) {
      let message: Document;
      try {
        message =
          this.codec === "binary"
            ? decodeDocument(payload)
            : decodeJson(payload.toString("utf8"), this.options.hints);
      } catch {
        continue; // undecodable frame; framing is still aligned
      }
      const op = message.get("op");
      if (op === "publish") {
        const callback = this.callbacks.get(message.get("topic") as string);
        if (callback) {
          callback((message.get("msg") as Document) ?? new Map());
        }
      } else if (op === "status") {
        this.statuses.push(message);
        if (message.get("level") === "error") {
          this.errors.push(new BrokerStatusError(message));
        }
        this.options.onStatus?.(message);
      }
    }
  }

  private send(envelope: Record<string, Value>): void {
    if (this.closed) {
      throw new Error("session is closed");
    }
    const document = doc(envelope);
    const payload = this.codec === "binary" ? encodeDocument(document) : Buffer.from(encodeJson(document), "utf8");
    this.socket.write(frameBytes(payload, this.codec));
  }

  advertise(topic: string, typeName?: string): void {
    validateTopic(topic);
    this.send(typeName === undefined ? { op: "advertise", topic } : { op: "advertise", topic, type: typeName });
  }

  unadvertise(topic: string): void {
    validateTopic(topic);
    this.send({ op: "unadvertise", topic });
  }

  publish(topic: string, msg: Document | Record<string, Value>): void {
    validateTopic(topic);
    this.send({ op: "publish", topic, msg: doc(msg as never) });
  }

  subscribe(topic: string, callback: MessageCallback, queueLength?: number): void {
    validateTopic(topic);
    this.callbacks.set(topic, callback);
    this.send(
      queueLength === undefined
        ? { op: "subscribe", topic }
        : { op: "subscribe", topic, queue_length: BigInt(queueLength) },
    );
  }

  unsubscribe(topic: string): void {
    validateTopic(topic);
    this.callbacks.delete(topic);
    this.send({ op: "unsubscribe", topic });
  }

  /** Wait until the socket has flushed everything queued so far. */
  flush(): Promise<void> {
    return new Promise((resolve) => {
      if (this.socket.writableLength === 0) {
        resolve();
      } else {
        this.socket.once("drain", () => resolve());
      }
    });
  }

  close(): Promise<void> {
    this.closed = true;
    return new Promise((resolve) => {
      this.socket.end(() => {
        this.socket.destroy();
        resolve();
      });
    });
  }
}

export function validateTopic(topic: string): void {
  if (!topic || !topic.startsWith("/") || /\s/.test(topic)) {
    throw new Error(`invalid topic ${JSON.stringify(topic)}: must start with '/' and contain no whitespace`);
  }
}
