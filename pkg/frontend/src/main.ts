// App controller: loads the packet, renders one item at a time, posts each
// choice immediately, and keeps a retry queue for choices made while the
// connection is down. An item is only ever shown as saved after the server
// acknowledged the decision.

import {
  ApiError,
  Choice,
  ConflictError,
  DecisionResult,
  exportPacket,
  getMeta,
  Item,
  listAllItems,
  Meta,
  NetworkError,
  postDecision,
} from "./api.js";
import { QueuedDecision, RetryQueue } from "./queue.js";
import { el, renderItem, renderProgress } from "./view.js";

interface Conflict {
  item: Item;
  choice: Choice;
  detail: string;
}

export class App {
  private items: Item[] = [];
  private meta: Meta | null = null;
  private index = 0;
  /** Locally chosen but not yet server-acknowledged, keyed by item id. */
  private queuedChoices = new Map<string, Choice>();
  private readonly queue: RetryQueue;
  private status = "";
  private conflict: Conflict | null = null;

  constructor(private readonly root: HTMLElement) {
    this.queue = new RetryQueue(
      (entry, result) => this.onQueuedSaved(entry, result),
      (entry, err) => this.onQueuedDropped(entry, err),
    );
  }

  async start(): Promise<void> {
    this.meta = await getMeta();
    this.items = await listAllItems();
    const firstPending = this.items.findIndex((it) => it.state === "PENDING");
    this.index = firstPending >= 0 ? firstPending : 0;
    window.addEventListener("keydown", (ev) => this.onKey(ev));
    window.addEventListener("online", () => void this.retryQueued());
    this.render();
  }

  private onKey(ev: KeyboardEvent): void {
    // A mount from an earlier page state must not react once its root has
    // been replaced in the document.
    if (!this.root.isConnected) return;
    if (this.conflict) {
      if (ev.key === "Escape") {
        this.conflict = null;
        this.render();
      }
      return;
    }
    if (ev.key === "1" || ev.key === "2") {
      const btn = this.root.querySelector<HTMLButtonElement>(
        `button[data-shortcut="${ev.key}"]`,
      );
      btn?.click();
    } else if (ev.key === "ArrowRight") {
      this.goto(this.index + 1);
    } else if (ev.key === "ArrowLeft") {
      this.goto(this.index - 1);
    }
  }

  private goto(index: number): void {
    if (index < 0 || index >= this.items.length) return;
    this.index = index;
    this.render();
  }

  /** Move on to the next item still needing a decision, if there is one. */
  private advance(): void {
    for (let i = this.index + 1; i < this.items.length; i++) {
      const it = this.items[i];
      if (it.state === "PENDING" && !this.queuedChoices.has(it.item_id)) {
        this.index = i;
        return;
      }
    }
    if (this.index + 1 < this.items.length) this.index += 1;
  }

  private applyResult(result: DecisionResult): void {
    const idx = this.items.findIndex(
      (it) => it.item_id === result.item.item_id,
    );
    if (idx >= 0) this.items[idx] = result.item;
    this.meta = result.meta;
    this.queuedChoices.delete(result.item.item_id);
  }

  private async choose(choice: Choice): Promise<void> {
    const item = this.items[this.index];
    if (!item) return;
    try {
      const result = await postDecision(item.item_id, choice, false);
      this.applyResult(result);
      this.status = `saved ${result.item.item_id}`;
      this.advance();
      // The connection is evidently back; drain anything still queued.
      if (this.queue.size > 0) void this.retryQueued();
    } catch (err) {
      if (err instanceof NetworkError) {
        this.queue.enqueue({ itemId: item.item_id, choice, override: false });
        this.queuedChoices.set(item.item_id, choice);
        this.status = "";
        this.advance();
      } else if (err instanceof ConflictError) {
        this.conflict = { item, choice, detail: err.message };
      } else if (err instanceof ApiError) {
        this.status = `error: ${err.message}`;
      } else {
        throw err;
      }
    }
    this.render();
  }

  private async confirmOverride(): Promise<void> {
    const c = this.conflict;
    if (!c) return;
    this.conflict = null;
    try {
      const result = await postDecision(c.item.item_id, c.choice, true);
      this.applyResult(result);
      this.status = `saved ${c.item.item_id} (override)`;
    } catch (err) {
      if (err instanceof NetworkError) {
        this.queue.enqueue({
          itemId: c.item.item_id,
          choice: c.choice,
          override: true,
        });
        this.queuedChoices.set(c.item.item_id, c.choice);
        this.status = "";
      } else if (err instanceof ApiError) {
        this.status = `error: ${err.message}`;
      } else {
        throw err;
      }
    }
    this.render();
  }

  private onQueuedSaved(entry: QueuedDecision, result: DecisionResult): void {
    this.applyResult(result);
    this.status = `saved ${entry.itemId}`;
    this.render();
  }

  private onQueuedDropped(entry: QueuedDecision, err: Error): void {
    this.queuedChoices.delete(entry.itemId);
    if (err instanceof ConflictError) {
      const item = this.items.find((it) => it.item_id === entry.itemId);
      if (item) {
        this.conflict = { item, choice: entry.choice, detail: err.message };
      }
    } else {
      this.status = `error: ${err.message}`;
    }
    this.render();
  }

  private async retryQueued(): Promise<void> {
    await this.queue.flush();
    this.render();
  }

  private async doExport(): Promise<void> {
    try {
      const result = await exportPacket();
      this.status = `exported to ${result.path}`;
    } catch (err) {
      this.status =
        err instanceof Error ? `error: ${err.message}` : "error: export failed";
    }
    this.render();
  }

  private renderToolbar(meta: Meta): HTMLElement {
    const bar = el("div", "toolbar");
    bar.appendChild(renderProgress(meta));

    const nav = el("div", "nav");
    const prev = el("button", "nav-btn", "← previous");
    prev.id = "prev-btn";
    prev.type = "button";
    prev.disabled = this.index <= 0;
    prev.addEventListener("click", () => this.goto(this.index - 1));
    nav.appendChild(prev);
    nav.appendChild(
      el(
        "span",
        "position",
        this.items.length === 0
          ? "no items"
          : `item ${this.index + 1} of ${this.items.length}`,
      ),
    );
    const next = el("button", "nav-btn", "next →");
    next.id = "next-btn";
    next.type = "button";
    next.disabled = this.index >= this.items.length - 1;
    next.addEventListener("click", () => this.goto(this.index + 1));
    nav.appendChild(next);
    bar.appendChild(nav);

    const exportBtn = el("button", "export-btn", "Export packet");
    exportBtn.id = "export-btn";
    exportBtn.type = "button";
    exportBtn.addEventListener("click", () => void this.doExport());
    bar.appendChild(exportBtn);
    return bar;
  }

  private renderOfflineBanner(): HTMLElement {
    const banner = el("div", "banner offline-banner");
    const n = this.queue.size;
    banner.appendChild(
      el(
        "span",
        "banner-text",
        `connection lost: ${n} decision${n === 1 ? "" : "s"} waiting to save`,
      ),
    );
    const retry = el("button", "retry-btn", "Retry now");
    retry.id = "retry-btn";
    retry.type = "button";
    retry.addEventListener("click", () => void this.retryQueued());
    banner.appendChild(retry);
    return banner;
  }

  private renderConflictOverlay(c: Conflict): HTMLElement {
    const overlay = el("div", "overlay");
    const dialog = el("div", "dialog");
    dialog.setAttribute("role", "dialog");
    dialog.appendChild(el("h2", undefined, "Already decided"));
    dialog.appendChild(el("p", "dialog-detail", c.detail));
    const who = c.choice === "RATER_1" ? "Rater 1" : "Rater 2";
    dialog.appendChild(
      el(
        "p",
        undefined,
        `Replace the saved decision with ${who}? The previous decision stays in the packet's override log.`,
      ),
    );
    const buttons = el("div", "dialog-buttons");
    const confirm = el("button", "danger", "Save override");
    confirm.id = "override-confirm";
    confirm.type = "button";
    confirm.addEventListener("click", () => void this.confirmOverride());
    buttons.appendChild(confirm);
    const cancel = el("button", undefined, "Cancel");
    cancel.id = "override-cancel";
    cancel.type = "button";
    cancel.addEventListener("click", () => {
      this.conflict = null;
      this.render();
    });
    buttons.appendChild(cancel);
    dialog.appendChild(buttons);
    overlay.appendChild(dialog);
    return overlay;
  }

  private render(): void {
    this.root.textContent = "";
    if (this.meta) this.root.appendChild(this.renderToolbar(this.meta));
    if (this.queue.size > 0) this.root.appendChild(this.renderOfflineBanner());
    if (this.status) this.root.appendChild(el("div", "status", this.status));
    const item = this.items[this.index];
    if (item) {
      this.root.appendChild(
        renderItem(item, {
          onChoose: (choice) => void this.choose(choice),
          queuedChoice: this.queuedChoices.get(item.item_id) ?? null,
        }),
      );
    } else {
      this.root.appendChild(
        el("p", "empty", "No disagreement items in this packet."),
      );
    }
    if (this.conflict) {
      this.root.appendChild(this.renderConflictOverlay(this.conflict));
    }
  }
}

export async function mountApp(root: HTMLElement): Promise<App> {
  const app = new App(root);
  await app.start();
  return app;
}

const autoRoot =
  typeof document === "undefined" ? null : document.getElementById("app");
if (autoRoot) {
  void mountApp(autoRoot);
}
