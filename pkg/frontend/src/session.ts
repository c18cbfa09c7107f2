/**
 * One WebSocket connection to the coordinator with request/response pairing.
 *
 * The protocol guarantees one response per request in order per connection,
 * so a FIFO of pending resolvers is all the correlation needed.
 */

import {
  DepthMsg,
  LeaseMsg,
  TaskEnvelope,
  WireError,
  bytesToB64,
  parseResponse,
} from "./protocol.js";

interface Pending {
  resolve: (value: unknown) => void;
  reject: (reason: Error) => void;
}

export class CoordinatorSession {
  private pending: Pending[] = [];
  private closed = false;

  private constructor(private socket: WebSocket) {
    socket.addEventListener("message", (event: MessageEvent) => {
      const waiter = this.pending.shift();
      if (!waiter) return;
      try {
        waiter.resolve(parseResponse(String(event.data)));
      } catch (err) {
        waiter.reject(err instanceof Error ? err : new Error(String(err)));
      }
    });
    const fail = () => {
      this.closed = true;
      const dropped = this.pending;
      this.pending = [];
      for (const waiter of dropped) {
        waiter.reject(new WireError("ConnectionLost", "socket closed"));
      }
    };
    socket.addEventListener("close", fail);
    socket.addEventListener("error", fail);
  }

  static connect(url: string, timeoutMs = 10_000): Promise<CoordinatorSession> {
    return new Promise((resolve, reject) => {
      const socket = new WebSocket(url);
      const timer = setTimeout(
        () => reject(new WireError("ConnectionLost", `connect timeout to ${url}`)),
        timeoutMs,
      );
      socket.addEventListener("open", () => {
        clearTimeout(timer);
        resolve(new CoordinatorSession(socket));
      });
      socket.addEventListener("error", () => {
        clearTimeout(timer);
        reject(new WireError("ConnectionLost", `cannot reach ${url}`));
      });
    });
  }

  get isOpen(): boolean {
    return !this.closed && this.socket.readyState === WebSocket.OPEN;
  }

  request(payload: Record<string, unknown>): Promise<unknown> {
    if (!this.isOpen) {
      return Promise.reject(new WireError("ConnectionLost", "session is closed"));
    }
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.socket.send(JSON.stringify(payload));
    });
  }

  close(): void {
    this.closed = true;
    this.socket.close();
  }

  /** Abrupt departure: drop the TCP stream without a close handshake. */
  abandon(): void {
    this.closed = true;
    // terminate() exists on Node's ws-like sockets; browsers only have close()
    const raw = this.socket as WebSocket & { terminate?: () => void };
    if (typeof raw.terminate === "function") {
      raw.terminate();
    } else {
      raw.close();
    }
  }

  // -- typed helpers --------------------------------------------------------

  async createQueue(queue: string): Promise<void> {
    await this.request({ op: "create_queue", queue });
  }

  async ensureQueue(queue: string): Promise<void> {
    try {
      await this.createQueue(queue);
    } catch (err) {
      if (!(err instanceof WireError && err.code === "QueueExists")) throw err;
    }
  }

  async publish(queue: string, task: TaskEnvelope): Promise<void> {
    await this.request({ op: "publish", queue, task });
  }

  async fetch(queue: string, workerId: string): Promise<LeaseMsg | null> {
    const got = await this.request({ op: "fetch", queue, worker_id: workerId });
    return got === null ? null : (got as LeaseMsg);
  }

  async ack(leaseId: string): Promise<void> {
    await this.request({ op: "ack", lease_id: leaseId });
  }

  async depth(queue: string): Promise<DepthMsg> {
    return (await this.request({ op: "depth", queue })) as DepthMsg;
  }

  async putPlain(key: string, payload: Uint8Array): Promise<void> {
    await this.request({ op: "put_plain", key, payload_b64: bytesToB64(payload) });
  }

  async getPlainB64(key: string): Promise<string> {
    const got = (await this.request({ op: "get_plain", key })) as { payload_b64: string };
    return got.payload_b64;
  }

  async putVersioned(key: string, version: number, payload: Uint8Array): Promise<void> {
    await this.request({
      op: "put_versioned",
      key,
      version,
      payload_b64: bytesToB64(payload),
    });
  }

  async getVersioned(key: string): Promise<{ version: number; payload_b64: string }> {
    return (await this.request({ op: "get_versioned", key })) as {
      version: number;
      payload_b64: string;
    };
  }
}
