/** Pending-edit batching with retry.
 *
 * Every click eventually produces exactly one acknowledged server event:
 * a batch keeps its idempotency key across retries, so resubmitting after
 * a network failure can never double-apply.
 */

import { ApiClient, StaleLeaseError } from "./api";
import type { LabelEventBody, TrainReportWire } from "./types";

let batchCounter = 0;

export function newBatchKey(): string {
  batchCounter += 1;
  return `batch-${Date.now()}-${batchCounter}`;
}

export interface PendingBatch {
  key: string;
  labels: LabelEventBody[];
}

export interface SubmitOutcome {
  ok: boolean;
  staleLease: boolean;
  report?: TrainReportWire;
}

export class SubmitQueue {
  private pending: PendingBatch | null = null;

  constructor(
    private api: ApiClient,
    private maxAttempts = 5,
    private delayMs = 250,
    private sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
  ) {}

  get hasPending(): boolean {
    return this.pending !== null;
  }

  /** Submit a batch, retrying transient failures with the same key.
   * On stale lease or exhausted retries the batch is retained so a later
   * flush() can deliver it. */
  async submit(labels: LabelEventBody[]): Promise<SubmitOutcome> {
    if (labels.length === 0) return { ok: true, staleLease: false };
    this.pending = this.pending
      ? { key: this.pending.key, labels: [...this.pending.labels, ...labels] }
      : { key: newBatchKey(), labels };
    return this.flush();
  }

  async flush(): Promise<SubmitOutcome> {
    if (!this.pending) return { ok: true, staleLease: false };
    const batch = this.pending;
    for (let attempt = 1; attempt <= this.maxAttempts; attempt++) {
      try {
        const report = await this.api.postLabels(batch.labels, batch.key);
        this.pending = null;
        return { ok: true, staleLease: false, report };
      } catch (err) {
        if (err instanceof StaleLeaseError) {
          return { ok: false, staleLease: true };
        }
        if (attempt === this.maxAttempts) break;
        await this.sleep(this.delayMs * attempt);
      }
    }
    return { ok: false, staleLease: false };
  }
}
