/**
 * Client side of the control service wire protocol: newline-delimited JSON
 * over TCP.  Requests look like {"id", "op", "args"} and answers come back
 * as {"id", "ok", "value"} or {"id", "ok": false, "error": {code, message}}.
 * A connection that has sent "stream_events" stops answering requests and
 * turns into a one-way feed of {"event": {...}} lines.
 */
import * as net from "node:net";

export interface EventRecord {
  seq: number;
  time: number;
  category: string;
  payload: Record<string, unknown>;
}

/** Error relayed from the service, carrying its machine-readable code. */
export class ApiError extends Error {
  readonly code: string;

  constructor(code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.code = code;
  }
}

interface Pending {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

function splitLines(buffer: string, onLine: (line: string) => void): string {
  let start = 0;
  for (;;) {
    const nl = buffer.indexOf("\n", start);
    if (nl < 0) break;
    const line = buffer.slice(start, nl).trim();
    start = nl + 1;
    if (line) onLine(line);
  }
  return buffer.slice(start);
}

/** One request/response connection.  Calls may be issued concurrently; the
 * response id pairs each answer with its caller. */
export class ControlClient {
  private buf = "";
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private down: Error | null = null;

  private constructor(private sock: net.Socket) {
    sock.setNoDelay(true);
    sock.on("data", (chunk) => {
      this.buf = splitLines(this.buf + chunk.toString("utf-8"), (line) =>
        this.dispatch(line),
      );
    });
    const fail = (err: Error) => this.abort(err);
    sock.on("error", fail);
    sock.on("close", () => fail(new Error("control connection closed")));
  }

  static connect(host: string, port: number, timeoutMs = 5000): Promise<ControlClient> {
    return new Promise((resolve, reject) => {
      const sock = net.connect({ host, port });
      const timer = setTimeout(() => {
        sock.destroy();
        reject(new Error(`connect to ${host}:${port} timed out`));
      }, timeoutMs);
      sock.once("connect", () => {
        clearTimeout(timer);
        resolve(new ControlClient(sock));
      });
      sock.once("error", (err) => {
        clearTimeout(timer);
        reject(err);
      });
    });
  }

  call<T = unknown>(op: string, args: Record<string, unknown> = {}): Promise<T> {
    if (this.down) return Promise.reject(this.down);
    const id = this.nextId++;
    return new Promise<T>((resolve, reject) => {
      this.pending.set(id, { resolve: resolve as (v: unknown) => void, reject });
      this.sock.write(JSON.stringify({ id, op, args }) + "\n");
    });
  }

  get closed(): boolean {
    return this.down !== null;
  }

  close(): void {
    this.abort(new Error("client closed"));
    this.sock.destroy();
  }

  private dispatch(line: string): void {
    let msg: { id?: number | null; ok?: boolean; value?: unknown; error?: { code: string; message: string } };
    try {
      msg = JSON.parse(line);
    } catch {
      return; // server never sends garbage; a torn line means the socket died
    }
    const waiting = typeof msg.id === "number" ? this.pending.get(msg.id) : undefined;
    if (!waiting) return;
    this.pending.delete(msg.id as number);
    if (msg.ok) {
      waiting.resolve(msg.value);
    } else {
      const err = msg.error ?? { code: "unknown", message: "malformed error reply" };
      waiting.reject(new ApiError(err.code, err.message));
    }
  }

  private abort(err: Error): void {
    if (this.down) return;
    this.down = err;
    for (const waiting of this.pending.values()) waiting.reject(err);
    this.pending.clear();
  }
}

/** A dedicated streaming connection: sends stream_events once, then emits
 * every {"event": ...} line until closed. */
class EventStream {
  private buf = "";
  private acked = false;

  constructor(
    private sock: net.Socket,
    since: number,
    private onEvent: (ev: EventRecord) => void,
    private onDown: (err: Error) => void,
  ) {
    sock.setNoDelay(true);
    sock.on("data", (chunk) => {
      this.buf = splitLines(this.buf + chunk.toString("utf-8"), (line) =>
        this.handleLine(line),
      );
    });
    sock.on("error", (err) => this.onDown(err));
    sock.on("close", () => this.onDown(new Error("event stream closed")));
    sock.write(JSON.stringify({ id: 0, op: "stream_events", args: { since } }) + "\n");
  }

  private handleLine(line: string): void {
    let msg: { ok?: boolean; event?: EventRecord };
    try {
      msg = JSON.parse(line);
    } catch {
      return;
    }
    if (!this.acked) {
      this.acked = true; // first line is the {"streaming": true} ack
      if (msg.ok === false) this.onDown(new Error("stream request rejected"));
      return;
    }
    if (msg.event) this.onEvent(msg.event);
  }

  close(): void {
    this.sock.removeAllListeners("close");
    this.sock.removeAllListeners("error");
    this.sock.destroy();
  }
}

export interface FeedOptions {
  since?: number;
  /** Polling cadence while the stream is down, milliseconds. */
  pollMs?: number;
  /** How long to wait before trying to re-open the stream. */
  retryMs?: number;
}

type Listener = (ev: EventRecord) => void;

/**
 * Ordered event delivery that survives the streaming channel dropping.
 *
 * Normally events arrive over one long-lived stream connection.  If that
 * connection dies the feed falls back to polling events_since over the
 * request client, resuming from the last sequence number it saw, and keeps
 * trying to re-establish the stream in the background.  Listeners never see
 * a duplicate or out-of-order sequence number either way.
 */
export class EventFeed {
  lastSeq: number;
  private stream: EventStream | null = null;
  private listeners = new Set<Listener>();
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  private polling = false;
  private readonly pollMs: number;
  private readonly retryMs: number;

  constructor(
    private host: string,
    private port: number,
    private client: ControlClient,
    opts: FeedOptions = {},
  ) {
    this.lastSeq = opts.since ?? 0;
    this.pollMs = opts.pollMs ?? 250;
    this.retryMs = opts.retryMs ?? 1000;
  }

  start(): void {
    this.stopped = false;
    this.openStream();
  }

  stop(): void {
    this.stopped = true;
    if (this.pollTimer) clearTimeout(this.pollTimer);
    if (this.retryTimer) clearTimeout(this.retryTimer);
    this.pollTimer = this.retryTimer = null;
    this.stream?.close();
    this.stream = null;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  /** True while events arrive via the stream rather than by polling. */
  get streaming(): boolean {
    return this.stream !== null;
  }

  private deliver(ev: EventRecord): void {
    if (ev.seq <= this.lastSeq) return; // replay overlap after a resume
    this.lastSeq = ev.seq;
    for (const fn of this.listeners) fn(ev);
  }

  private openStream(): void {
    if (this.stopped) return;
    const sock = net.connect({ host: this.host, port: this.port });
    sock.once("connect", () => {
      if (this.stopped) {
        sock.destroy();
        return;
      }
      this.stream = new EventStream(
        sock,
        this.lastSeq,
        (ev) => this.deliver(ev),
        () => this.streamDown(),
      );
    });
    sock.once("error", () => this.streamDown());
  }

  private streamDown(): void {
    if (this.stream) {
      this.stream.close();
      this.stream = null;
    }
    if (this.stopped) return;
    this.schedulePoll();
    if (!this.retryTimer) {
      this.retryTimer = setTimeout(() => {
        this.retryTimer = null;
        this.openStream();
      }, this.retryMs);
    }
  }

  private schedulePoll(): void {
    if (this.stopped || this.stream || this.pollTimer) return;
    this.pollTimer = setTimeout(() => {
      this.pollTimer = null;
      void this.pollOnce();
    }, this.pollMs);
  }

  private async pollOnce(): Promise<void> {
    if (this.stopped || this.stream || this.polling) return;
    this.polling = true;
    try {
      const batch = await this.client.call<EventRecord[]>("events_since", {
        since: this.lastSeq,
      });
      for (const ev of batch) this.deliver(ev);
    } catch {
      // request channel down too; keep trying, the backend may come back
    } finally {
      this.polling = false;
      this.schedulePoll();
    }
  }
}
