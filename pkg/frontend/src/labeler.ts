import type { Label, LabelCounts, ValidationItem } from "./types.js";

export type SubmitFn = (labels: { image_id: string; label: Label }[]) => Promise<LabelCounts>;

export const KEY_BINDINGS: Record<string, Label> = {
  "1": "positive",
  "0": "negative",
};

/**
 * Keyboard-speed labeling over the validation queue.
 *
 * Labels stage locally and submit in batches (default 10); undo pops the last
 * staged label without touching the server. A failed submit restores the
 * staged batch so nothing keyed is ever lost.
 */
export class LabelingQueue {
  private pending: ValidationItem[];
  private cursor = 0;
  private staged: { image_id: string; label: Label }[] = [];
  private committed: number;
  private readonly total: number;

  constructor(
    items: ValidationItem[],
    private submit: SubmitFn,
    private batchSize = 10,
  ) {
    this.pending = items.filter((item) => item.label === null);
    this.committed = items.length - this.pending.length;
    this.total = items.length;
  }

  current(): ValidationItem | null {
    return this.pending[this.cursor] ?? null;
  }

  progress(): { labeled: number; total: number } {
    return { labeled: this.committed + this.staged.length, total: this.total };
  }

  stagedCount(): number {
    return this.staged.length;
  }

  done(): boolean {
    return this.cursor >= this.pending.length && this.staged.length === 0;
  }

  /** Handle a keypress; returns true when the key did something. */
  async handleKey(key: string): Promise<boolean> {
    if (key === "u") {
      return this.undo();
    }
    const label = KEY_BINDINGS[key];
    if (label === undefined) {
      return false;
    }
    await this.label(label);
    return true;
  }

  async label(value: Label): Promise<void> {
    const item = this.current();
    if (item === null) {
      return;
    }
    this.staged.push({ image_id: item.image_id, label: value });
    this.cursor += 1;
    if (this.staged.length >= this.batchSize) {
      await this.flush();
    }
  }

  /** Undo the last unsubmitted label; the server is untouched. */
  undo(): boolean {
    if (this.staged.length === 0) {
      return false;
    }
    this.staged.pop();
    this.cursor -= 1;
    return true;
  }

  /** Submit whatever is staged (used at batch boundaries and queue end). */
  async flush(): Promise<void> {
    if (this.staged.length === 0) {
      return;
    }
    const batch = this.staged;
    this.staged = [];
    try {
      await this.submit(batch);
      this.committed += batch.length;
    } catch (error) {
      this.staged = batch; // roll the optimistic update back; retry later
      throw error;
    }
  }
}
