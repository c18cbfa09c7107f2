/**
 * The volunteer loop: fetch one task, run its handler, ack, repeat.
 *
 * Mirrors the native worker's semantics: one in-flight task, ack only after
 * the handler resolves, and nothing special on abrupt departure — the
 * server-side lease simply expires and the task is redelivered. On a socket
 * drop the loop reconnects with exponential backoff until stopped.
 */

import {
  LeaseMsg,
  TaskEnvelope,
  WireError,
  b64ToBytes,
  b64ToText,
  bytesToFloats,
  customKind,
  floatsToBytes,
} from "./protocol.js";
import { CoordinatorSession } from "./session.js";
import { SoftmaxTaskPayload, softmaxGradient } from "./softmaxGrad.js";

export type TaskHandler = (
  task: TaskEnvelope,
  session: CoordinatorSession,
) => Promise<void>;

export interface VolunteerStatus {
  workerId: string;
  state: "connecting" | "working" | "idle" | "left" | "reconnecting";
  tasksDone: number;
  tasksFailed: number;
  queueDepth: number | null;
  currentTask: number | null;
}

export interface VolunteerOptions {
  workerId?: string;
  queues?: string[];
  backoffMs?: number;
  maxReconnects?: number;
  onStatus?: (status: VolunteerStatus) => void;
}

export const LINEAR_SOFTMAX_KIND = customKind("linear-softmax-grad");

/** The built-in demo handler: softmax-regression gradient into the store. */
export const runLinearSoftmax: TaskHandler = async (task, session) => {
  const payload = JSON.parse(b64ToText(task.payload_b64)) as SoftmaxTaskPayload;
  const weights = bytesToFloats(b64ToBytes(payload.w_b64), payload.dim_f, payload.dim_c);
  const xs = bytesToFloats(b64ToBytes(payload.x_b64), payload.y.length, payload.dim_f);
  const grad = softmaxGradient(weights, xs, payload.y);
  await session.putPlain(payload.result_key, floatsToBytes(grad));
};

export function defaultHandlers(): Map<string, TaskHandler> {
  return new Map([[LINEAR_SOFTMAX_KIND, runLinearSoftmax]]);
}

export class Volunteer {
  readonly workerId: string;
  private queues: string[];
  private handlers: Map<string, TaskHandler>;
  private backoffMs: number;
  private maxReconnects: number;
  private onStatus?: (status: VolunteerStatus) => void;
  private session: CoordinatorSession | null = null;
  private stopping = false;
  private status: VolunteerStatus;

  constructor(
    private endpoint: string,
    handlers: Map<string, TaskHandler> = defaultHandlers(),
    options: VolunteerOptions = {},
  ) {
    this.workerId = options.workerId ?? `browser-${Math.random().toString(36).slice(2, 8)}`;
    this.queues = options.queues ?? ["InitialQueue"];
    this.handlers = handlers;
    this.backoffMs = options.backoffMs ?? 250;
    this.maxReconnects = options.maxReconnects ?? 5;
    this.onStatus = options.onStatus;
    this.status = {
      workerId: this.workerId,
      state: "connecting",
      tasksDone: 0,
      tasksFailed: 0,
      queueDepth: null,
      currentTask: null,
    };
  }

  /** Join and process tasks until stop() or an unrecoverable disconnect. */
  async joinAndWork(): Promise<VolunteerStatus> {
    let reconnects = 0;
    while (!this.stopping) {
      try {
        this.update({ state: "connecting" });
        this.session = await CoordinatorSession.connect(this.endpoint);
        reconnects = 0;
        await this.workLoop(this.session);
      } catch (err) {
        if (this.stopping) break;
        if (!(err instanceof WireError && err.code === "ConnectionLost")) throw err;
        reconnects += 1;
        if (reconnects > this.maxReconnects) throw err;
        this.update({ state: "reconnecting" });
        await sleep(this.backoffMs * 2 ** (reconnects - 1));
      }
    }
    this.session?.close();
    this.update({ state: "left", currentTask: null });
    return this.status;
  }

  /** Finish (and ack) the current task, then leave cleanly. */
  stop(): void {
    this.stopping = true;
  }

  /** The tab-close analog: vanish mid-task; the lease expires server-side. */
  leaveAbruptly(): void {
    this.stopping = true;
    this.session?.abandon();
  }

  private async workLoop(session: CoordinatorSession): Promise<void> {
    while (!this.stopping) {
      let lease: LeaseMsg | null = null;
      for (const queue of this.queues) {
        lease = await session.fetch(queue, this.workerId);
        if (lease) break;
      }
      if (!lease) {
        this.update({ state: "idle", currentTask: null });
        await sleep(this.backoffMs);
        continue;
      }
      const handler = this.handlers.get(lease.task.kind);
      if (!handler) {
        // not ours; let the lease expire for a capable worker
        this.update({ tasksFailed: this.status.tasksFailed + 1 });
        await sleep(this.backoffMs);
        continue;
      }
      this.update({ state: "working", currentTask: lease.task.task_id });
      try {
        await handler(lease.task, session);
      } catch (err) {
        if (err instanceof WireError && err.code === "ConnectionLost") throw err;
        this.update({ tasksFailed: this.status.tasksFailed + 1, currentTask: null });
        continue; // no ack: redelivery will retry it
      }
      if (this.stopping && !session.isOpen) break;
      await session.ack(lease.lease_id);
      this.update({ tasksDone: this.status.tasksDone + 1, currentTask: null });
    }
  }

  /** Passive readout support: current depth of the first queue. */
  async pollDepth(): Promise<number | null> {
    if (!this.session?.isOpen) return null;
    try {
      const depth = await this.session.depth(this.queues[0]);
      this.update({ queueDepth: depth.pending + depth.leased });
      return this.status.queueDepth;
    } catch {
      return null;
    }
  }

  private update(patch: Partial<VolunteerStatus>): void {
    this.status = { ...this.status, ...patch };
    this.onStatus?.(this.status);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
