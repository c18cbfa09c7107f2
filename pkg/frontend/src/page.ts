/**
 * Page wiring: join the job on load, show a passive readout, offer a
 * leave button. Compute runs in awaited chunks off the rendering path, so
 * the page stays responsive while working.
 *
 * Query parameters: ?ws=host:port (coordinator WebSocket) and optionally
 * &queue=Name.
 */

import { Volunteer, VolunteerStatus, defaultHandlers } from "./volunteer.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function render(status: VolunteerStatus): void {
  el("worker-id").textContent = status.workerId;
  el("state").textContent = status.state;
  el("tasks-done").textContent = String(status.tasksDone);
  el("tasks-failed").textContent = String(status.tasksFailed);
  el("queue-depth").textContent =
    status.queueDepth === null ? "-" : String(status.queueDepth);
  el("current-task").textContent =
    status.currentTask === null ? "-" : `#${status.currentTask}`;
}

export function startPage(): void {
  const params = new URLSearchParams(window.location.search);
  const endpoint = `ws://${params.get("ws") ?? "127.0.0.1:9201"}/`;
  const queue = params.get("queue") ?? "InitialQueue";
  el("endpoint").textContent = endpoint;

  const volunteer = new Volunteer(endpoint, defaultHandlers(), {
    queues: [queue],
    onStatus: render,
  });

  const depthTimer = setInterval(() => void volunteer.pollDepth(), 1000);
  el("leave").addEventListener("click", () => {
    volunteer.stop();
    el("leave").setAttribute("disabled", "disabled");
  });
  window.addEventListener("beforeunload", () => volunteer.leaveAbruptly());

  volunteer
    .joinAndWork()
    .catch((err) => {
      el("state").textContent = `error: ${err}`;
    })
    .finally(() => clearInterval(depthTimer));
}

startPage();
