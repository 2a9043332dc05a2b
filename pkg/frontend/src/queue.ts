// Offline retry queue for decision POSTs.
//
// A decision that fails at the network layer is held here and replayed in
// order once the connection returns. Anything the server actually answered
// (409 conflict, validation error, unknown item) is not retried; retrying
// would just repeat the same refusal.

import { Choice, DecisionResult, NetworkError, postDecision } from "./api.js";

export interface QueuedDecision {
  itemId: string;
  choice: Choice;
  override: boolean;
}

type SendFn = (entry: QueuedDecision) => Promise<DecisionResult>;
type SavedFn = (entry: QueuedDecision, result: DecisionResult) => void;
type DroppedFn = (entry: QueuedDecision, err: Error) => void;

export class RetryQueue {
  private entries: QueuedDecision[] = [];
  private flushing = false;

  constructor(
    private readonly onSaved: SavedFn,
    private readonly onDropped: DroppedFn,
    private readonly send: SendFn = (e) =>
      postDecision(e.itemId, e.choice, e.override),
  ) {}

  get size(): number {
    return this.entries.length;
  }

  has(itemId: string): boolean {
    return this.entries.some((e) => e.itemId === itemId);
  }

  enqueue(entry: QueuedDecision): void {
    // A newer choice for the same item supersedes the queued one.
    this.entries = this.entries.filter((e) => e.itemId !== entry.itemId);
    this.entries.push(entry);
  }

  /**
   * Replay queued decisions in order. Stops at the first network failure
   * (the failing entry stays queued); concurrent calls are coalesced so no
   * entry is ever sent twice.
   */
  async flush(): Promise<void> {
    if (this.flushing) return;
    this.flushing = true;
    try {
      while (this.entries.length > 0) {
        const entry = this.entries[0];
        try {
          const result = await this.send(entry);
          this.remove(entry);
          this.onSaved(entry, result);
        } catch (err) {
          if (err instanceof NetworkError) return;
          this.remove(entry);
          this.onDropped(
            entry,
            err instanceof Error ? err : new Error(String(err)),
          );
        }
      }
    } finally {
      this.flushing = false;
    }
  }

  private remove(entry: QueuedDecision): void {
    // By identity, not by id: the entry may have been superseded while its
    // send was in flight, in which case there is nothing to remove.
    const idx = this.entries.indexOf(entry);
    if (idx >= 0) this.entries.splice(idx, 1);
  }
}
